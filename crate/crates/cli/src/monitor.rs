//! End-to-end monitoring: detect, diagnose, localize and emit alerts.

use std::io::Write;
use std::path::{Path, PathBuf};

use fiberwatch_core::anomaly::{anomaly_scores, classify_score, DetectionThreshold, GruAe, Verdict};
use fiberwatch_core::dataset::{segment, Label, Normalization, Sequence};
use fiberwatch_core::diagnoser::{diagnose_batch, ABiGru};
use fiberwatch_core::trace_sim::{OtdrTrace, DEFAULT_PULSE_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::commands::{load_ae, load_diagnoser, load_threshold, not_found};
use crate::config::{Context, MonitorConfig};
use crate::error::{CliResult, Classify};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub trace_id: String,
    pub window_offset: usize,
    pub verdict: Verdict,
    pub fault_class: Label,
    pub confidence: f64,
    /// Predicted index inside the window.
    pub fault_index: f64,
    /// `(window_offset + fault_index) × sample_spacing_m` from the trace start.
    pub distance_m: f64,
    pub gamma_db: f64,
    pub anomaly_score: f64,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub windows: usize,
    pub anomalous_windows: usize,
    pub alerts: usize,
}

pub struct Monitor<'a> {
    pub ae: &'a GruAe,
    pub threshold: &'a DetectionThreshold,
    pub diagnoser: &'a ABiGru,
    pub config: &'a MonitorConfig,
    /// Must match the normalization the models were trained with.
    pub normalization: Normalization,
    pub seed: u64,
}

impl Monitor<'_> {
    /// All per-window alerts of one trace, before merging.
    pub fn window_alerts(&self, trace: &OtdrTrace, trace_id: &str) -> fiberwatch_core::Result<(usize, Vec<AlertRecord>)> {
        let windows = segment(trace, trace_id, self.config.stride, self.normalization)?;
        let scores = anomaly_scores(self.ae, &windows)?;
        let theta = self.threshold.theta;
        let (flagged, flagged_scores): (Vec<Sequence>, Vec<f64>) = windows
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| classify_score(s, theta) == Verdict::Anomalous)
            .map(|(w, &s)| (w.clone(), s))
            .unzip();
        let diagnosed = diagnose_batch(self.diagnoser, &flagged, trace.sample_spacing_m)?;
        let alerts = flagged
            .iter()
            .zip(flagged_scores)
            .zip(diagnosed)
            .map(|((w, score), d)| AlertRecord {
                trace_id: trace_id.to_string(),
                window_offset: w.source.offset,
                verdict: Verdict::Anomalous,
                fault_class: d.predicted_class,
                confidence: d.confidence(),
                fault_index: d.predicted_index,
                distance_m: (w.source.offset as f64 + d.predicted_index) * trace.sample_spacing_m,
                gamma_db: w.gamma_db,
                anomaly_score: score,
                threshold: theta,
                seed: self.seed,
            })
            .collect();
        Ok((windows.len(), alerts))
    }

    /// Merged alerts for one trace, ordered by distance.
    pub fn run(&self, trace: &OtdrTrace, trace_id: &str) -> fiberwatch_core::Result<(TraceSummary, Vec<AlertRecord>)> {
        let (windows, raw) = self.window_alerts(trace, trace_id)?;
        let anomalous = raw.len();
        let pulse_m = DEFAULT_PULSE_SAMPLES as f64 * trace.sample_spacing_m;
        let mut alerts = merge_alerts(raw, pulse_m);
        if self.config.suppress_after_cut {
            if let Some(cut) = alerts.iter().find(|a| a.fault_class == Label::FiberCut).map(|a| a.distance_m) {
                alerts.retain(|a| a.distance_m <= cut + pulse_m);
            }
        }
        let summary = TraceSummary {
            trace_id: trace_id.to_string(),
            windows,
            anomalous_windows: anomalous,
            alerts: alerts.len(),
        };
        Ok((summary, alerts))
    }
}

/// Groups alerts whose distances chain within `width_m` and keeps the most
/// confident record of each group.
pub fn merge_alerts(mut alerts: Vec<AlertRecord>, width_m: f64) -> Vec<AlertRecord> {
    alerts.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m).then(a.window_offset.cmp(&b.window_offset)));
    let mut merged: Vec<AlertRecord> = Vec::new();
    let mut last_distance = f64::NEG_INFINITY;
    for a in alerts {
        let joins = a.distance_m - last_distance <= width_m;
        last_distance = a.distance_m;
        match merged.last_mut() {
            Some(m) if joins => {
                if a.confidence > m.confidence {
                    *m = a;
                }
            }
            _ => merged.push(a),
        }
    }
    merged
}

/// Trace files named on the command line; directories contribute their
/// `*.json` files in name order.
pub fn collect_traces(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .validation(format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(not_found(p));
        }
    }
    Ok(files)
}

pub fn read_trace(path: &Path) -> CliResult<OtdrTrace> {
    let text = std::fs::read_to_string(path).validation(format!("reading trace {}", path.display()))?;
    let trace: OtdrTrace = serde_json::from_str(&text).validation(format!("parsing trace {}", path.display()))?;
    if trace.samples_db.iter().any(|v| !v.is_finite()) || !(trace.sample_spacing_m > 0.0) {
        return Err(crate::error::CliError::validation(anyhow::anyhow!(
            "trace {} has non-finite samples or a non-positive spacing",
            path.display()
        )));
    }
    Ok(trace)
}

/// Monitors every trace, writing alerts as JSON lines to `out` and one
/// summary line per trace to `log`.
pub fn cmd_monitor(ctx: &Context, inputs: &[PathBuf], out: &mut dyn Write, log: &mut dyn Write) -> CliResult<Vec<TraceSummary>> {
    let files = collect_traces(inputs)?;
    let ae = load_ae(ctx)?;
    let threshold = load_threshold(ctx)?;
    let diagnoser = load_diagnoser(ctx)?;
    let monitor = Monitor {
        ae: &ae,
        threshold: &threshold,
        diagnoser: &diagnoser,
        config: &ctx.config.monitor,
        normalization: ctx.config.generator.normalization,
        seed: ctx.seed,
    };
    let mut summaries = Vec::new();
    for f in files {
        let trace = read_trace(&f)?;
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (summary, alerts) = monitor.run(&trace, &id).inference(format!("monitoring {}", f.display()))?;
        for a in &alerts {
            serde_json::to_writer(&mut *out, a).inference("writing alerts")?;
            out.write_all(b"\n").inference("writing alerts")?;
        }
        out.flush().inference("writing alerts")?;
        let _ = writeln!(
            log,
            "{}: {} windows, {} anomalous, {} alerts",
            summary.trace_id, summary.windows, summary.anomalous_windows, summary.alerts
        );
        summaries.push(summary);
    }
    Ok(summaries)
}
