//! The six pipeline commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fiberwatch_core::anomaly::{anomaly_scores, calibrate_threshold, train_ae, DetectionThreshold, GruAe, Verdict, classify_score};
use fiberwatch_core::baselines::{if_fit, if_score, LofModel};
use fiberwatch_core::dataset::{read_dataset_file, write_dataset_file, DatasetSplit, Label, Sequence};
use fiberwatch_core::diagnoser::{
    diagnose_batch, per_snr_breakdown, train_diagnoser, train_flat_model_b, ABiGru, Variant,
};
use fiberwatch_core::eval::{
    evaluate_at_threshold, evaluate_detection, localization_errors, ConfusionMatrix, DiagnosisEval, EvalReport,
    ModelComparison,
};
use fiberwatch_core::generate::{generate_ae_dataset, generate_diag_dataset, monitor_trace, MonitorTraceSpec};
use fiberwatch_core::trace_sim::default_sample_spacing_m;
use fiberwatch_core::training::{EpochRecord, TrainConfig, TrainingCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::Context;
use crate::error::{CliResult, Classify};

const DIAG_STREAM: u64 = 2;
const FLAT_STREAM: u64 = 3;
const BASELINE_STREAM: u64 = 4;
const TRACE_STREAM: u64 = 5;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).validation(format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let write = || -> anyhow::Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    };
    write().inference(format!("writing {}", path.display()))
}

pub fn load_dataset(path: &Path) -> CliResult<DatasetSplit> {
    read_dataset_file(path).validation(format!("reading dataset {} (run `gen` first)", path.display()))
}

pub fn load_ae(ctx: &Context) -> CliResult<GruAe> {
    let path = ctx.ae_model();
    Ok(GruAe::load(&path).validation(format!("loading {} (run `train-ae` first)", path.display()))?.0)
}

pub fn load_threshold(ctx: &Context) -> CliResult<DetectionThreshold> {
    let path = ctx.threshold();
    DetectionThreshold::load(&path).validation(format!("loading {} (run `calibrate` first)", path.display()))
}

pub fn load_diagnoser(ctx: &Context) -> CliResult<ABiGru> {
    let path = ctx.diag_model();
    Ok(ABiGru::load(&path, Variant::Faults)
        .validation(format!("loading {} (run `train-diag` first)", path.display()))?
        .0)
}

pub fn load_flat(ctx: &Context) -> CliResult<ABiGru> {
    let path = ctx.flat_model();
    Ok(ABiGru::load(&path, Variant::Flat)
        .validation(format!("loading {} (run `train-diag --flat` first)", path.display()))?
        .0)
}

fn model_metadata(ctx: &Context, curve: &TrainingCurve) -> serde_json::Value {
    let best = curve.best();
    json!({
        "seed": ctx.seed,
        "epochs_run": curve.epochs.len(),
        "best_epoch": best.map(|b| b.epoch),
        "best_validation_loss": best.map(|b| b.validation_loss),
    })
}

fn write_curve(path: &Path, curve: &TrainingCurve) -> CliResult<()> {
    let f = File::create(path).inference(format!("writing {}", path.display()))?;
    curve.write_csv(BufWriter::new(f)).inference(format!("writing {}", path.display()))
}

fn epoch_logger<'a>(name: &'a str, log: &'a mut dyn Write) -> impl FnMut(&EpochRecord) + 'a {
    move |e| {
        let mark = if e.improved { " *" } else { "" };
        let _ = writeln!(
            log,
            "{name} epoch {:>3}  train {:.6}  validation {:.6}{mark}",
            e.epoch, e.train_loss, e.validation_loss
        );
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GenSummary {
    pub ae_sizes: [usize; 3],
    pub diag_sizes: [usize; 3],
    pub traces: Vec<PathBuf>,
}

/// Writes the anomaly and diagnosis datasets, plus `traces` monitor traces
/// (half with one fault, half clean) with their plans.
pub fn cmd_gen(ctx: &Context, traces: usize, log: &mut dyn Write) -> CliResult<GenSummary> {
    let g = &ctx.config.generator;
    let data = ctx.data_dir();
    create_dir(&data)?;
    let ae = generate_ae_dataset(g, ctx.seed).validation("generating the anomaly dataset")?;
    write_dataset_file(&ae, &ctx.ae_dataset()).inference("writing the anomaly dataset")?;
    let diag = generate_diag_dataset(g, ctx.seed).validation("generating the diagnosis dataset")?;
    write_dataset_file(&diag, &ctx.diag_dataset()).inference("writing the diagnosis dataset")?;
    let sizes = |d: &DatasetSplit| [d.train.len(), d.validation.len(), d.test.len()];
    let _ = writeln!(log, "anomaly dataset {:?}, diagnosis dataset {:?}", sizes(&ae), sizes(&diag));

    let mut written = Vec::new();
    if traces > 0 {
        let dir = ctx.trace_dir();
        let plans = dir.join("plans");
        create_dir(&plans)?;
        let m = &ctx.config.monitor;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.stream_seed(TRACE_STREAM));
        for i in 0..traces {
            let fault = (i % 2 == 0).then(|| Label::FAULTS[(i / 2) % Label::FAULTS.len()]);
            let spec = MonitorTraceSpec {
                length_m: m.trace_length_m,
                fault,
                snr_db: m.trace_snr_db.sample(&mut rng),
                with_connector: true,
            };
            let (plan, trace) = monitor_trace(&spec, g, rng.random()).validation("generating a monitor trace")?;
            let name = format!("trace-{i:04}.json");
            write_json(&dir.join(&name), &trace)?;
            write_json(&plans.join(&name), &json!({ "seed": ctx.seed, "spec": spec, "plan": plan }))?;
            written.push(dir.join(name));
        }
        let _ = writeln!(log, "{} monitor traces in {}", traces, dir.display());
    }
    Ok(GenSummary {
        ae_sizes: sizes(&ae),
        diag_sizes: sizes(&diag),
        traces: written,
    })
}

fn training(ctx: &Context, base: &TrainConfig, stream: u64) -> TrainConfig {
    TrainConfig {
        seed: if stream == 0 { ctx.seed } else { ctx.stream_seed(stream) },
        ..*base
    }
}

pub fn cmd_train_ae(ctx: &Context, log: &mut dyn Write) -> CliResult<TrainingCurve> {
    let data = load_dataset(&ctx.ae_dataset())?;
    let cfg = training(ctx, &ctx.config.ae_training, 0);
    let (model, curve) = train_ae(&data.train, &data.validation, &ctx.config.autoencoder, &cfg, epoch_logger("train-ae", log))
        .inference("training the autoencoder")?;
    create_dir(&ctx.model_dir())?;
    model
        .save(&ctx.ae_model(), model_metadata(ctx, &curve))
        .inference("saving the autoencoder")?;
    write_curve(&ctx.model_dir().join("gru_ae_curve.csv"), &curve)?;
    Ok(curve)
}

pub fn cmd_calibrate(ctx: &Context, log: &mut dyn Write) -> CliResult<DetectionThreshold> {
    let data = load_dataset(&ctx.ae_dataset())?;
    let model = load_ae(ctx)?;
    let t = calibrate_threshold(&model, &data.validation, ctx.seed).inference("calibrating the threshold")?;
    t.save(&ctx.threshold()).inference("saving the threshold")?;
    let _ = writeln!(
        log,
        "theta {:.6e}  validation F1 {:.4}  precision {:.4}  recall {:.4}",
        t.theta, t.f1, t.precision, t.recall
    );
    Ok(t)
}

/// Faults plus one normal per four faults (an equal share per class),
/// taken in order from `normals`.
pub fn five_class_set(faults: &[Sequence], normals: &[Sequence]) -> Vec<Sequence> {
    let n = faults.len() / Label::FAULTS.len();
    let mut out: Vec<Sequence> = faults.to_vec();
    out.extend(normals.iter().filter(|s| s.label == Label::Normal).take(n).cloned());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagTraining {
    pub diagnoser: TrainingCurve,
    pub flat: Option<TrainingCurve>,
}

/// Trains the four-class diagnoser and, with `flat`, the five-class
/// comparison model on diagnosis faults plus anomaly-dataset normals.
pub fn cmd_train_diag(ctx: &Context, flat: bool, log: &mut dyn Write) -> CliResult<DiagTraining> {
    let diag = load_dataset(&ctx.diag_dataset())?;
    let cfg = &ctx.config.diagnoser;
    let tc = training(ctx, &ctx.config.diag_training, DIAG_STREAM);
    let (model, curve) = train_diagnoser(&diag.train, &diag.validation, cfg, &tc, epoch_logger("train-diag", log))
        .inference("training the diagnoser")?;
    create_dir(&ctx.model_dir())?;
    model
        .save(&ctx.diag_model(), model_metadata(ctx, &curve))
        .inference("saving the diagnoser")?;
    write_curve(&ctx.model_dir().join("abigru_curve.csv"), &curve)?;

    let flat_curve = if flat {
        let ae = load_dataset(&ctx.ae_dataset())?;
        let train = five_class_set(&diag.train, &ae.train);
        let validation = five_class_set(&diag.validation, &ae.validation);
        let tc = training(ctx, &ctx.config.diag_training, FLAT_STREAM);
        let (model, curve) = train_flat_model_b(&train, &validation, cfg, &tc, epoch_logger("train-flat", log))
            .inference("training the flat model")?;
        model
            .save(&ctx.flat_model(), model_metadata(ctx, &curve))
            .inference("saving the flat model")?;
        write_curve(&ctx.model_dir().join("bigru_flat_curve.csv"), &curve)?;
        Some(curve)
    } else {
        None
    };
    Ok(DiagTraining {
        diagnoser: curve,
        flat: flat_curve,
    })
}

fn inputs(seqs: &[Sequence]) -> Vec<Vec<f64>> {
    seqs.iter().map(Sequence::model_input).collect()
}

fn label_names(labels: &[Label]) -> Vec<String> {
    labels.iter().map(|l| l.name().to_string()).collect()
}

/// Five-class predictions of the integrated pipeline: the autoencoder gate
/// followed by the four-class diagnoser.
pub fn model_a_predictions(
    ae: &GruAe,
    theta: f64,
    diagnoser: &ABiGru,
    seqs: &[Sequence],
) -> fiberwatch_core::Result<Vec<Label>> {
    let scores = anomaly_scores(ae, seqs)?;
    let diagnosed = diagnose_batch(diagnoser, seqs, default_sample_spacing_m())?;
    Ok(scores
        .iter()
        .zip(diagnosed)
        .map(|(&s, d)| match classify_score(s, theta) {
            Verdict::Normal => Label::Normal,
            Verdict::Anomalous => d.predicted_class,
        })
        .collect())
}

fn confusion(labels: &[Label], truth: &[Sequence], predicted: &[Label]) -> ConfusionMatrix {
    let index = |l: Label| labels.iter().position(|&x| x == l).expect("label in set");
    ConfusionMatrix::from_pairs(
        label_names(labels),
        truth.iter().zip(predicted).map(|(s, &p)| (index(s.label), index(p))),
    )
}

/// Scores every method and model on the held-out splits.
pub fn evaluate(ctx: &Context, log: &mut dyn Write) -> CliResult<EvalReport> {
    let ae_data = load_dataset(&ctx.ae_dataset())?;
    let diag_data = load_dataset(&ctx.diag_dataset())?;
    let ae = load_ae(ctx)?;
    let threshold = load_threshold(ctx)?;
    let diagnoser = load_diagnoser(ctx)?;
    let flat = load_flat(ctx)?;
    let spacing = default_sample_spacing_m();
    let mut report = EvalReport::new(ctx.seed);

    let test = &ae_data.test;
    let truth: Vec<bool> = test.iter().map(|s| s.label.is_fault()).collect();
    let scores = anomaly_scores(&ae, test).inference("scoring the anomaly test set")?;
    let at_theta = evaluate_at_threshold("gru-ae@theta", &scores, &truth, threshold.theta).inference("evaluating detection")?;
    let _ = writeln!(
        log,
        "gru-ae at theta: F1 {:.4}  AUC {:.4}  AUPRC {:.4}",
        at_theta.metrics.f1, at_theta.roc.area, at_theta.pr.area
    );
    report.detection.push(at_theta);
    report.detection.push(evaluate_detection("gru-ae", &scores, &truth).inference("evaluating detection")?);

    let b = &ctx.config.baselines;
    let train = inputs(&ae_data.train);
    let test_inputs = inputs(test);
    let forest = if_fit(&train, b.trees, b.subsample.min(train.len()), ctx.stream_seed(BASELINE_STREAM))
        .inference("fitting the isolation forest")?;
    let if_scores: Vec<f64> = test_inputs.iter().map(|x| if_score(&forest, x)).collect();
    report.detection.push(evaluate_detection("isolation-forest", &if_scores, &truth).inference("evaluating IF")?);
    let lof = LofModel::fit(train, b.lof_k).inference("fitting LOF")?;
    let lof_scores: Vec<f64> = test_inputs.iter().map(|x| lof.score(x)).collect();
    report.detection.push(evaluate_detection("lof", &lof_scores, &truth).inference("evaluating LOF")?);
    for d in &report.detection[1..] {
        let _ = writeln!(log, "{:<16} best F1 {:.4}  AUPRC {:.4}", d.method, d.metrics.f1, d.pr.area);
    }

    let dtest = &diag_data.test;
    let results = diagnose_batch(&diagnoser, dtest, spacing).inference("diagnosing the test set")?;
    let predicted: Vec<Label> = results.iter().map(|r| r.predicted_class).collect();
    let cm = confusion(&Label::FAULTS, dtest, &predicted);
    let per_snr = per_snr_breakdown(&diagnoser, dtest, spacing).inference("per-SNR breakdown")?;
    let (pred_idx, true_idx): (Vec<f64>, Vec<f64>) = dtest
        .iter()
        .zip(&results)
        .filter_map(|(s, r)| s.fault_index.map(|i| (r.predicted_index, i as f64)))
        .unzip();
    let loc = localization_errors(&pred_idx, &true_idx, spacing).inference("localization errors")?;
    let _ = writeln!(
        log,
        "diagnosis accuracy {:.4}  localization RMSE {:.3} samples ({:.3} m)",
        cm.accuracy(),
        loc.rmse_index,
        loc.rmse_m
    );
    report.diagnosis = Some(DiagnosisEval {
        accuracy: cm.accuracy(),
        confusion: cm,
        per_snr,
    });
    report.localization = Some(loc);

    let five = five_class_set(dtest, test);
    let a = model_a_predictions(&ae, threshold.theta, &diagnoser, &five).inference("running model A")?;
    let b_pred: Vec<Label> = diagnose_batch(&flat, &five, spacing)
        .inference("running model B")?
        .into_iter()
        .map(|r| r.predicted_class)
        .collect();
    let ca = confusion(&Label::ALL, &five, &a);
    let cb = confusion(&Label::ALL, &five, &b_pred);
    let _ = writeln!(
        log,
        "average accuracy: model A {:.4}  model B {:.4}",
        ca.average_accuracy(),
        cb.average_accuracy()
    );
    report.model_comparison = Some(ModelComparison {
        model_a_average_accuracy: ca.average_accuracy(),
        model_b_average_accuracy: cb.average_accuracy(),
        model_a_confusion: ca,
        model_b_confusion: cb,
    });
    Ok(report)
}

pub fn cmd_eval(ctx: &Context, log: &mut dyn Write) -> CliResult<EvalReport> {
    let report = evaluate(ctx, log)?;
    let dir = ctx.report_dir();
    fiberwatch_core::eval::render_report(&report, &dir).inference(format!("writing reports to {}", dir.display()))?;
    let _ = writeln!(log, "reports written to {}", dir.display());
    Ok(report)
}

pub(crate) fn not_found(path: &Path) -> crate::error::CliError {
    crate::error::CliError::validation(anyhow!("{} does not exist", path.display()))
}
