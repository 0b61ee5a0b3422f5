//! Detection, diagnosis and localization metrics, and report files.
//!
//! Positive means fault throughout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const REPORT_SCHEMA: &str = "report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any of the three had a zero denominator and was defined as 0.
    pub degenerate: bool,
}

pub fn binary_metrics(tp: u64, _tn: u64, fp: u64, fn_: u64) -> BinaryMetrics {
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_).filter(|_| tp > 0);
    let degenerate = p.is_none() || r.is_none() || (tp == 0);
    BinaryMetrics {
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        degenerate,
    }
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CoreError::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::InvalidInput("scores must be finite".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(CoreError::SingleClass);
    }
    Ok(())
}

/// Unique scores in descending order with the number of positives and
/// negatives at each.
fn grouped_desc(scores: &[f64], labels: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    for i in idx {
        let (pos, neg) = if labels[i] { (1, 0) } else { (0, 1) };
        match out.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += pos;
                last.2 += neg;
            }
            _ => out.push((scores[i], pos, neg)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweeps every midpoint between consecutive unique scores (detection is
/// `score > θ`) plus one candidate below the lowest score that flags
/// everything, and keeps the best F1, preferring the larger θ on ties.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice> {
    check_binary(scores, labels)?;
    let groups = grouped_desc(scores, labels);
    let total_pos = labels.iter().filter(|&&l| l).count() as u64;
    let mut best: Option<ThresholdChoice> = None;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut consider = |theta: f64, tp: u64, fp: u64| {
        let m = binary_metrics(tp, 0, fp, total_pos - tp);
        // Candidates arrive in decreasing θ, so only a strictly better F1 wins.
        if best.is_none_or(|b| m.f1 > b.f1) {
            best = Some(ThresholdChoice {
                threshold: theta,
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
            });
        }
    };
    for w in groups.windows(2) {
        tp += w[0].1;
        fp += w[0].2;
        consider(0.5 * (w[0].0 + w[1].0), tp, fp);
    }
    let total_neg = labels.len() as u64 - total_pos;
    let lowest = groups.last().expect("non-empty").0;
    consider(lowest - 1.0, total_pos, total_neg);
    Ok(best.expect("at least one candidate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `None` for the added endpoints.
    pub threshold: Option<f64>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub area: f64,
}

/// ROC curve (x = FPR, y = TPR) over every unique score, flagging
/// `score ≥ threshold`, with (0,0) and (1,1) endpoints; area by trapezoids.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Curve> {
    check_binary(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let n = labels.len() as f64 - p;
    let mut points = vec![CurvePoint {
        threshold: None,
        x: 0.0,
        y: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (s, pos, neg) in grouped_desc(scores, labels) {
        tp += pos;
        fp += neg;
        points.push(CurvePoint {
            threshold: Some(s),
            x: fp as f64 / n,
            y: tp as f64 / p,
        });
    }
    points.push(CurvePoint {
        threshold: None,
        x: 1.0,
        y: 1.0,
    });
    let area = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum();
    Ok(Curve { points, area })
}

/// Precision-recall curve (x = recall, y = precision) over every unique
/// score; area by step interpolation, each recall increment weighted by the
/// precision reached at it.
pub fn pr_auprc(scores: &[f64], labels: &[bool]) -> Result<Curve> {
    check_binary(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let groups = grouped_desc(scores, labels);
    let mut points = vec![CurvePoint {
        threshold: None,
        x: 0.0,
        y: 1.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (s, pos, neg) in groups {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / p;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold: Some(s),
            x: recall,
            y: precision,
        });
    }
    Ok(Curve { points, area })
}

/// Mann-Whitney U / (n_pos · n_neg), ties counted as one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_binary(scores, labels)?;
    let mut u = 0.0;
    let (mut np, mut nn) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            nn += 1.0;
            continue;
        }
        np += 1.0;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                u += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    Ok(u / (np * nn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(labels: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(labels);
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        hits as f64 / total as f64
    }

    /// Each row divided by its support; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Per-class true-class rate; `None` for classes with no support.
    pub fn class_recalls(&self) -> Vec<Option<f64>> {
        (0..self.counts.len())
            .map(|i| {
                let s = self.support(i);
                (s > 0).then(|| self.counts[i][i] as f64 / s as f64)
            })
            .collect()
    }

    /// Mean of the per-class true-class rates over supported classes.
    pub fn average_accuracy(&self) -> f64 {
        let r: Vec<f64> = self.class_recalls().into_iter().flatten().collect();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationErrors {
    /// Signed errors (prediction − truth) in index units.
    pub errors_index: Vec<f64>,
    pub rmse_index: f64,
    pub rmse_m: f64,
    pub mean_index: f64,
    pub mean_m: f64,
    pub std_index: f64,
    pub std_m: f64,
    pub sample_spacing_m: f64,
    /// Histogram of signed errors in meters.
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BIN_M: f64 = 0.05;

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn localization_errors(predictions: &[f64], truths: &[f64], sample_spacing_m: f64) -> Result<LocalizationErrors> {
    if predictions.len() != truths.len() {
        return Err(CoreError::InvalidInput(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let errors: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| p - t).collect();
    let n = errors.len().max(1) as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let r = rmse(&errors);
    let meters: Vec<f64> = errors.iter().map(|e| e * sample_spacing_m).collect();
    Ok(LocalizationErrors {
        rmse_index: r,
        rmse_m: r * sample_spacing_m,
        mean_index: mean,
        mean_m: mean * sample_spacing_m,
        std_index: var.sqrt(),
        std_m: var.sqrt() * sample_spacing_m,
        sample_spacing_m,
        histogram: histogram(&meters, HISTOGRAM_BIN_M),
        errors_index: errors,
    })
}

/// Fixed-width bins aligned to multiples of `width`, covering all values.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let key = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| key(v)).min().expect("non-empty");
    let hi = values.iter().map(|&v| key(v)).max().expect("non-empty");
    let mut bins: Vec<HistogramBin> = (lo..=hi)
        .map(|k| HistogramBin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        bins[(key(v) - lo) as usize].count += 1;
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr_lower_db: f64,
    pub snr_upper_db: f64,
    pub count: usize,
    pub accuracy: f64,
    /// Over rows with a localization target.
    pub rmse_index: Option<f64>,
    pub rmse_m: Option<f64>,
}

/// One evaluated example for the per-SNR tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrSample {
    pub gamma_db: f64,
    pub correct: bool,
    pub index_error: Option<f64>,
}

/// 1 dB bins over [0, 30] (the last bin includes 30); empty bins are left
/// out rather than reported as zero.
pub fn per_snr_table(samples: &[SnrSample], sample_spacing_m: f64) -> Vec<SnrRow> {
    const BINS: usize = 30;
    let mut groups: Vec<Vec<&SnrSample>> = vec![Vec::new(); BINS];
    for s in samples {
        if !(0.0..=BINS as f64).contains(&s.gamma_db) {
            continue;
        }
        let b = (s.gamma_db.floor() as usize).min(BINS - 1);
        groups[b].push(s);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(b, g)| {
            let errs: Vec<f64> = g.iter().filter_map(|s| s.index_error).collect();
            let r = (!errs.is_empty()).then(|| rmse(&errs));
            SnrRow {
                snr_lower_db: b as f64,
                snr_upper_db: (b + 1) as f64,
                count: g.len(),
                accuracy: g.iter().filter(|s| s.correct).count() as f64 / g.len() as f64,
                rmse_index: r,
                rmse_m: r.map(|v| v * sample_spacing_m),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub method: String,
    pub threshold: f64,
    pub metrics: BinaryMetrics,
    pub roc: Curve,
    pub pr: Curve,
}

/// Best-F1 threshold plus ROC and PR curves for one score set.
pub fn evaluate_detection(method: &str, scores: &[f64], labels: &[bool]) -> Result<DetectionEval> {
    let choice = best_f1_threshold(scores, labels)?;
    Ok(DetectionEval {
        method: method.to_string(),
        threshold: choice.threshold,
        metrics: BinaryMetrics {
            precision: choice.precision,
            recall: choice.recall,
            f1: choice.f1,
            degenerate: false,
        },
        roc: roc_auc(scores, labels)?,
        pr: pr_auprc(scores, labels)?,
    })
}

/// Detection at a fixed threshold (`score > θ`).
pub fn evaluate_at_threshold(method: &str, scores: &[f64], labels: &[bool], theta: f64) -> Result<DetectionEval> {
    check_binary(scores, labels)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > theta, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(DetectionEval {
        method: method.to_string(),
        threshold: theta,
        metrics: binary_metrics(tp, tn, fp, fn_),
        roc: roc_auc(scores, labels)?,
        pr: pr_auprc(scores, labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEval {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_snr: Vec<SnrRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model_a_average_accuracy: f64,
    pub model_b_average_accuracy: f64,
    pub model_a_confusion: ConfusionMatrix,
    pub model_b_confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub seed: u64,
    pub detection: Vec<DetectionEval>,
    pub diagnosis: Option<DiagnosisEval>,
    pub localization: Option<LocalizationErrors>,
    pub model_comparison: Option<ModelComparison>,
}

impl EvalReport {
    pub fn new(seed: u64) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            seed,
            detection: Vec::new(),
            diagnosis: None,
            localization: None,
            model_comparison: None,
        }
    }
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Writes `report.json` and one CSV per curve, table and histogram into `dir`.
pub fn render_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = csv_file(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut json, report)?;
    json.write_all(b"\n")?;
    json.flush()?;

    if !report.detection.is_empty() {
        let mut f = csv_file(dir, "detection.csv")?;
        writeln!(f, "method,threshold,precision,recall,f1,auc,auprc")?;
        for d in &report.detection {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                d.method, d.threshold, d.metrics.precision, d.metrics.recall, d.metrics.f1, d.roc.area, d.pr.area
            )?;
            for (kind, curve, cols) in [("roc", &d.roc, "fpr,tpr"), ("pr", &d.pr, "recall,precision")] {
                let mut c = csv_file(dir, &format!("{kind}_{}.csv", slug(&d.method)))?;
                writeln!(c, "threshold,{cols}")?;
                for p in &curve.points {
                    writeln!(c, "{},{},{}", opt(p.threshold), p.x, p.y)?;
                }
                c.flush()?;
            }
        }
        f.flush()?;
    }
    if let Some(d) = &report.diagnosis {
        write_confusion(dir, "confusion.csv", &d.confusion)?;
        let mut f = csv_file(dir, "per_snr.csv")?;
        writeln!(f, "snr_lower_db,snr_upper_db,count,accuracy,rmse_index,rmse_m")?;
        for r in &d.per_snr {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.snr_lower_db,
                r.snr_upper_db,
                r.count,
                r.accuracy,
                opt(r.rmse_index),
                opt(r.rmse_m)
            )?;
        }
        f.flush()?;
    }
    if let Some(l) = &report.localization {
        let mut f = csv_file(dir, "localization_histogram.csv")?;
        writeln!(f, "error_lower_m,error_upper_m,count")?;
        for b in &l.histogram {
            writeln!(f, "{},{},{}", b.lower, b.upper, b.count)?;
        }
        f.flush()?;
    }
    if let Some(m) = &report.model_comparison {
        let mut f = csv_file(dir, "model_comparison.csv")?;
        writeln!(f, "model,average_accuracy")?;
        writeln!(f, "model_a,{}", m.model_a_average_accuracy)?;
        writeln!(f, "model_b,{}", m.model_b_average_accuracy)?;
        f.flush()?;
        write_confusion(dir, "confusion_model_a.csv", &m.model_a_confusion)?;
        write_confusion(dir, "confusion_model_b.csv", &m.model_b_confusion)?;
    }
    Ok(())
}

fn write_confusion(dir: &Path, name: &str, m: &ConfusionMatrix) -> Result<()> {
    let mut f = csv_file(dir, name)?;
    writeln!(f, "true\\predicted,{}", m.labels.join(","))?;
    for (label, row) in m.labels.iter().zip(&m.counts) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(f, "{label},{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}
