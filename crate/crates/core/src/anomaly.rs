//! GRU autoencoder: trained on normal windows only, scores windows by
//! reconstruction error and flags those above a calibrated threshold.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use fiberwatch_nn::{
    mse_loss, read_params, rng_from_seed, with_prefix, with_prefix_mut, write_params, Activation, Dense, DenseCache,
    Direction, GruCache, GruLayer, Matrix, MergeConvention, Module, Param, SeqBatch,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Sequence, MODEL_STEPS};
use crate::error::{CoreError, Result};
use crate::training::{fit, mean_loss, Trainable, TrainConfig, TrainingCurve};

pub use crate::dataset::encode_input;

pub const MODEL_KIND: &str = "gru-ae/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    /// Encoder widths; the decoder mirrors them.
    pub encoder_widths: [usize; 2],
    pub output_activation: Activation,
    pub convention: MergeConvention,
    pub steps: usize,
    /// Decode from the last step back to the first.
    pub reverse_decoder: bool,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            encoder_widths: [64, 32],
            output_activation: Activation::Elu,
            convention: MergeConvention::KeepPrevious,
            steps: MODEL_STEPS,
            reverse_decoder: true,
        }
    }
}

#[derive(Debug, Clone)]
struct AeCache {
    target: SeqBatch,
    enc1: GruCache,
    enc2: GruCache,
    dec1: GruCache,
    dec2: GruCache,
    out: DenseCache,
}

/// Encoder GRU(64) → GRU(32); the last hidden state is repeated over every
/// step and decoded by GRU(32) → GRU(64) → per-step dense(1), by default
/// running from the last step back to the first.
#[derive(Debug, Clone)]
pub struct GruAe {
    pub config: AeConfig,
    pub enc1: GruLayer,
    pub enc2: GruLayer,
    pub dec1: GruLayer,
    pub dec2: GruLayer,
    pub out: Dense,
    cache: Option<AeCache>,
}

impl PartialEq for GruAe {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params() == other.params()
    }
}

impl GruAe {
    pub fn new(config: AeConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let [w1, w2] = config.encoder_widths;
        let c = config.convention;
        Self {
            enc1: GruLayer::new(1, w1, c, &mut rng),
            enc2: GruLayer::new(w1, w2, c, &mut rng),
            dec1: GruLayer::new(w2, w2, c, &mut rng),
            dec2: GruLayer::new(w2, w1, c, &mut rng),
            out: Dense::new(w1, 1, config.output_activation, &mut rng),
            config,
            cache: None,
        }
    }

    pub fn batch_input(inputs: &[&[f64]], steps: usize) -> Result<SeqBatch> {
        Ok(SeqBatch::from_examples(inputs, steps, 1)?)
    }

    fn run(&self, x: &SeqBatch) -> Result<(SeqBatch, AeCache)> {
        let steps = x.steps;
        let (h1, enc1) = self.enc1.forward(x, Direction::Forward)?;
        let (h2, enc2) = self.enc2.forward(&h1, Direction::Forward)?;
        let code = h2.step(steps - 1);
        let mut rep = SeqBatch::zeros(steps, x.batch, h2.dim);
        for t in 0..steps {
            rep.step_mut(t).copy_from_slice(code);
        }
        let dir = if self.config.reverse_decoder {
            Direction::Backward
        } else {
            Direction::Forward
        };
        let (d1, dec1) = self.dec1.forward(&rep, dir)?;
        let (d2, dec2) = self.dec2.forward(&d1, dir)?;
        let flat = Matrix {
            rows: steps * x.batch,
            cols: d2.dim,
            data: d2.data,
        };
        let (y, out) = self.out.forward(&flat)?;
        let recon = SeqBatch {
            steps,
            batch: x.batch,
            dim: 1,
            data: y.data,
        };
        let cache = AeCache {
            target: x.clone(),
            enc1,
            enc2,
            dec1,
            dec2,
            out,
        };
        Ok((recon, cache))
    }

    /// Reconstruction without keeping intermediates.
    pub fn reconstruct(&self, x: &SeqBatch) -> Result<SeqBatch> {
        Ok(self.run(x)?.0)
    }

    /// Training forward pass; intermediates are kept for [`GruAe::backward`].
    pub fn forward(&mut self, x: &SeqBatch) -> Result<SeqBatch> {
        let (y, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Backpropagates `d_recon` through the last training forward pass.
    pub fn backward(&mut self, d_recon: &SeqBatch) -> Result<()> {
        let cache = self.cache.take().ok_or(fiberwatch_nn::NnError::BackwardBeforeForward)?;
        let (steps, batch) = (d_recon.steps, d_recon.batch);
        let dy = Matrix {
            rows: steps * batch,
            cols: 1,
            data: d_recon.data.clone(),
        };
        let dd2 = self.out.backward(&cache.out, &dy)?;
        let dd2 = SeqBatch {
            steps,
            batch,
            dim: dd2.cols,
            data: dd2.data,
        };
        let dd1 = self.dec2.backward(&cache.dec2, &dd2)?;
        let drep = self.dec1.backward(&cache.dec1, &dd1)?;
        let mut dh2 = SeqBatch::zeros(steps, batch, drep.dim);
        let last = dh2.step_mut(steps - 1);
        for t in 0..steps {
            for (a, b) in last.iter_mut().zip(drep.step(t)) {
                *a += b;
            }
        }
        let dh1 = self.enc2.backward(&cache.enc2, &dh2)?;
        self.enc1.backward(&cache.enc1, &dh1)?;
        Ok(())
    }

    /// Mean squared reconstruction error over the batch, with gradients.
    pub fn train_step(&mut self, x: &SeqBatch) -> Result<f64> {
        let y = self.forward(x)?;
        let target = &self.cache.as_ref().expect("just stored").target;
        let loss = mse_loss(&target.data, &y.data)?;
        let n = y.data.len() as f64;
        let grad: Vec<f64> = y.data.iter().zip(&target.data).map(|(a, b)| 2.0 * (a - b) / n).collect();
        self.backward(&SeqBatch { data: grad, ..y })?;
        Ok(loss)
    }

    /// Per-example mean squared reconstruction error.
    pub fn scores(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(256) {
            let refs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
            let steps = refs[0].len();
            let x = Self::batch_input(&refs, steps)?;
            let y = self.reconstruct(&x)?;
            for b in 0..x.batch {
                let err: f64 = (0..steps)
                    .map(|t| {
                        let d = y.at(t, b)[0] - x.at(t, b)[0];
                        d * d
                    })
                    .sum();
                out.push(err / steps as f64);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        self.write(out, metadata)
    }

    pub fn write<W: Write>(&self, out: W, metadata: serde_json::Value) -> Result<()> {
        write_params(
            out,
            MODEL_KIND,
            self.config.convention,
            serde_json::to_value(&self.config)?,
            metadata,
            self,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn read<R: Read>(input: R) -> Result<(Self, serde_json::Value)> {
        let (manifest, tensors) = read_params(input)?;
        if manifest.model_kind != MODEL_KIND {
            return Err(CoreError::ModelKind {
                found: manifest.model_kind,
                expected: MODEL_KIND.into(),
            });
        }
        let mut config: AeConfig = serde_json::from_value(manifest.config)?;
        config.convention = manifest.merge_convention;
        let mut model = Self::new(config, 0);
        fiberwatch_nn::load_into(&mut model, &tensors)?;
        Ok((model, manifest.metadata))
    }
}

impl Module for GruAe {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = with_prefix("enc1", self.enc1.params());
        v.extend(with_prefix("enc2", self.enc2.params()));
        v.extend(with_prefix("dec1", self.dec1.params()));
        v.extend(with_prefix("dec2", self.dec2.params()));
        v.extend(with_prefix("out", self.out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = with_prefix_mut("enc1", self.enc1.params_mut());
        v.extend(with_prefix_mut("enc2", self.enc2.params_mut()));
        v.extend(with_prefix_mut("dec1", self.dec1.params_mut()));
        v.extend(with_prefix_mut("dec2", self.dec2.params_mut()));
        v.extend(with_prefix_mut("out", self.out.params_mut()));
        v
    }
}

impl Trainable for GruAe {
    type Example = Vec<f64>;

    fn accumulate_gradients(&mut self, batch: &[&Vec<f64>]) -> Result<f64> {
        let refs: Vec<&[f64]> = batch.iter().map(|v| v.as_slice()).collect();
        let x = Self::batch_input(&refs, self.config.steps)?;
        self.train_step(&x)
    }

    fn loss(&self, examples: &[&Vec<f64>]) -> Result<f64> {
        let refs: Vec<&[f64]> = examples.iter().map(|v| v.as_slice()).collect();
        let x = Self::batch_input(&refs, self.config.steps)?;
        let y = self.reconstruct(&x)?;
        Ok(mse_loss(&x.data, &y.data)?)
    }
}

fn require_normal(seqs: &[Sequence]) -> Result<()> {
    match seqs.iter().find(|s| s.label != Label::Normal) {
        Some(s) => Err(CoreError::WrongLabel {
            found: s.label.to_string(),
            expected: "the autoencoder trains on normal sequences only",
        }),
        None => Ok(()),
    }
}

/// Trains on normal sequences; normal sequences of `validation` drive early
/// stopping.
pub fn train_ae(
    normal_train: &[Sequence],
    validation: &[Sequence],
    config: &AeConfig,
    train: &TrainConfig,
    progress: impl FnMut(&crate::training::EpochRecord),
) -> Result<(GruAe, TrainingCurve)> {
    require_normal(normal_train)?;
    let x: Vec<Vec<f64>> = normal_train.iter().map(Sequence::model_input).collect();
    let v: Vec<Vec<f64>> = validation
        .iter()
        .filter(|s| s.label == Label::Normal)
        .map(Sequence::model_input)
        .collect();
    let mut model = GruAe::new(config.clone(), train.seed);
    let curve = fit(&mut model, &x, &v, train, progress)?;
    Ok((model, curve))
}

/// Mean squared reconstruction error over all 31 steps.
pub fn anomaly_score(model: &GruAe, seq: &Sequence) -> Result<f64> {
    Ok(model.scores(&[seq.model_input()])?[0])
}

pub fn anomaly_scores(model: &GruAe, seqs: &[Sequence]) -> Result<Vec<f64>> {
    let inputs: Vec<Vec<f64>> = seqs.iter().map(Sequence::model_input).collect();
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    model.scores(&inputs)
}

/// Mean reconstruction loss of normal sequences.
pub fn reconstruction_loss(model: &GruAe, seqs: &[Sequence]) -> Result<f64> {
    let x: Vec<Vec<f64>> = seqs.iter().map(Sequence::model_input).collect();
    mean_loss(model, &x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThreshold {
    pub theta: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub calibrated_at_seed: u64,
}

impl DetectionThreshold {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if !(t.theta.is_finite() && t.theta >= 0.0) {
            return Err(CoreError::InvalidInput(format!("threshold {} must be finite and non-negative", t.theta)));
        }
        Ok(t)
    }
}

/// Best-F1 threshold over all midpoints of sorted unique scores and a
/// flag-everything candidate; ties go to the larger threshold. θ is clamped
/// at 0 since scores are squared errors.
pub fn calibrate_scores(scores: &[f64], is_fault: &[bool], seed: u64) -> Result<DetectionThreshold> {
    let sweep = crate::eval::best_f1_threshold(scores, is_fault)?;
    let theta = sweep.threshold.max(0.0);
    let m = if theta == sweep.threshold {
        crate::eval::BinaryMetrics {
            precision: sweep.precision,
            recall: sweep.recall,
            f1: sweep.f1,
            degenerate: false,
        }
    } else {
        crate::eval::evaluate_at_threshold("clamped", scores, is_fault, theta)?.metrics
    };
    Ok(DetectionThreshold {
        theta,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        calibrated_at_seed: seed,
    })
}

pub fn calibrate_threshold(model: &GruAe, validation: &[Sequence], seed: u64) -> Result<DetectionThreshold> {
    let scores = anomaly_scores(model, validation)?;
    let labels: Vec<bool> = validation.iter().map(|s| s.label.is_fault()).collect();
    calibrate_scores(&scores, &labels, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub verdict: Verdict,
    pub score: f64,
}

/// Strict comparison: a score equal to θ is normal.
pub fn classify_score(score: f64, theta: f64) -> Verdict {
    if score > theta {
        Verdict::Anomalous
    } else {
        Verdict::Normal
    }
}

pub fn detect(model: &GruAe, threshold: &DetectionThreshold, seq: &Sequence) -> Result<Detection> {
    let score = anomaly_score(model, seq)?;
    Ok(Detection {
        verdict: classify_score(score, threshold.theta),
        score,
    })
}

pub fn detect_batch(model: &GruAe, threshold: &DetectionThreshold, seqs: &[Sequence]) -> Result<Vec<Detection>> {
    Ok(anomaly_scores(model, seqs)?
        .into_iter()
        .map(|score| Detection {
            verdict: classify_score(score, threshold.theta),
            score,
        })
        .collect())
}
