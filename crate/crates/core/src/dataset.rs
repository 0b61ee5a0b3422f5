//! Length-30 windows cut from traces, stratified splits and the JSONL
//! dataset format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::trace_sim::{EventKind, OtdrTrace, Snr};

pub const WINDOW: usize = 30;
/// Window plus the trailing SNR step.
pub const MODEL_STEPS: usize = WINDOW + 1;
pub const DEFAULT_STRIDE: usize = 15;
/// γ is divided by this before it enters a model.
pub const GAMMA_SCALE_DB: f64 = 30.0;
/// Smallest dB span a window is stretched over when normalizing model input.
pub const DEFAULT_MIN_SPAN_DB: f64 = 5.0;

pub const FORMAT_NAME: &str = "fiberwatch-ds";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Eavesdropping,
    BadSplice,
    DirtyConnector,
    FiberCut,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Normal,
        Label::Eavesdropping,
        Label::BadSplice,
        Label::DirtyConnector,
        Label::FiberCut,
    ];
    pub const FAULTS: [Label; 4] = [Label::Eavesdropping, Label::BadSplice, Label::DirtyConnector, Label::FiberCut];

    /// Fault label for an annotated event; normal link components map to `None`.
    pub fn from_event(kind: EventKind) -> Option<Label> {
        match kind {
            EventKind::Tapping => Some(Label::Eavesdropping),
            EventKind::BadSplice => Some(Label::BadSplice),
            EventKind::DirtyConnector => Some(Label::DirtyConnector),
            EventKind::FiberCut => Some(Label::FiberCut),
            EventKind::ConnectorReflective | EventKind::Reflector | EventKind::Splitter => None,
        }
    }

    pub fn is_fault(self) -> bool {
        self != Label::Normal
    }

    /// Position among [`Label::FAULTS`].
    pub fn fault_class(self) -> Option<usize> {
        Label::FAULTS.iter().position(|&l| l == self)
    }

    /// Position among [`Label::ALL`].
    pub fn class_index(self) -> usize {
        Label::ALL.iter().position(|&l| l == self).expect("every label is listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Eavesdropping => "eavesdropping",
            Label::BadSplice => "bad_splice",
            Label::DirtyConnector => "dirty_connector",
            Label::FiberCut => "fiber_cut",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub trace_id: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub values: Vec<f64>,
    pub gamma_db: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_index: Option<usize>,
    pub source: Source,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidInput(m));
        if self.values.len() != WINDOW {
            return bad(format!("sequence has {} values, expected {WINDOW}", self.values.len()));
        }
        if !self.values.iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad("sequence values must lie in [0, 1]".into());
        }
        if !self.gamma_db.is_finite() {
            return bad("gamma_db must be finite".into());
        }
        match (self.label.is_fault(), self.fault_index) {
            (true, Some(i)) if i < WINDOW => Ok(()),
            (true, Some(i)) => bad(format!("fault_index {i} outside [0, {}]", WINDOW - 1)),
            (true, None) => bad(format!("{} sequence without fault_index", self.label)),
            (false, Some(_)) => bad("normal sequence carries a fault_index".into()),
            (false, None) => Ok(()),
        }
    }

    /// The 31-step model input: the 30 values followed by γ/30.
    pub fn model_input(&self) -> Vec<f64> {
        encode_input(&self.values, self.gamma_db)
    }
}

pub fn encode_input(values: &[f64], gamma_db: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(values.len() + 1);
    v.extend_from_slice(values);
    v.push(gamma_db / GAMMA_SCALE_DB);
    v
}

fn check_finite(raw: &[f64]) -> Result<()> {
    if raw.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::InvalidInput("cannot normalize non-finite samples".into()))
    }
}

/// Per-window min-max scaling to [0, 1]; constant windows map to zeros.
pub fn normalize(raw: &[f64]) -> Result<Vec<f64>> {
    normalize_with_min_span(raw, 0.0)
}

/// Min-max scaling with the range stretched to at least `min_span_db`,
/// so that flat windows keep their noise small instead of filling [0, 1].
pub fn normalize_with_min_span(raw: &[f64], min_span_db: f64) -> Result<Vec<f64>> {
    check_finite(raw)?;
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(min_span_db);
    if span <= 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|&x| ((x - min) / span).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    MinMax,
    MinSpan { min_span_db: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::MinSpan {
            min_span_db: DEFAULT_MIN_SPAN_DB,
        }
    }
}

impl Normalization {
    pub fn apply(self, raw: &[f64]) -> Result<Vec<f64>> {
        match self {
            Normalization::MinMax => normalize(raw),
            Normalization::MinSpan { min_span_db } => normalize_with_min_span(raw, min_span_db),
        }
    }
}

/// γ recorded for a trace; noiseless traces sit at the top of the scale.
pub fn trace_gamma_db(trace: &OtdrTrace) -> f64 {
    match trace.snr_db {
        Snr::Db(v) => v,
        Snr::Noiseless => GAMMA_SCALE_DB,
    }
}

/// The window starting at `offset`, labeled from the trace annotations.
pub fn window_at(trace: &OtdrTrace, trace_id: &str, offset: usize, norm: Normalization) -> Result<Sequence> {
    let n = trace.samples_db.len();
    if offset + WINDOW > n {
        return Err(CoreError::TraceTooShort {
            found: n,
            needed: offset + WINDOW,
        });
    }
    let fault = trace.annotations.iter().find_map(|a| {
        let label = Label::from_event(a.kind)?;
        (offset..offset + WINDOW).contains(&a.index).then(|| (label, a.index - offset))
    });
    let (label, fault_index) = match fault {
        Some((l, i)) => (l, Some(i)),
        None => (Label::Normal, None),
    };
    Ok(Sequence {
        values: norm.apply(&trace.samples_db[offset..offset + WINDOW])?,
        gamma_db: trace_gamma_db(trace),
        label,
        fault_index,
        source: Source {
            trace_id: trace_id.to_string(),
            offset,
        },
    })
}

/// Window start offsets for a trace of `n` samples.
pub fn window_offsets(n: usize, stride: usize) -> Vec<usize> {
    if n < WINDOW || stride == 0 {
        return Vec::new();
    }
    (0..=n - WINDOW).step_by(stride).collect()
}

/// Sliding windows of length 30 with the given stride.
pub fn segment(trace: &OtdrTrace, trace_id: &str, stride: usize, norm: Normalization) -> Result<Vec<Sequence>> {
    let n = trace.samples_db.len();
    if n < WINDOW {
        return Err(CoreError::TraceTooShort { found: n, needed: WINDOW });
    }
    if stride == 0 {
        return Err(CoreError::InvalidInput("stride must be at least 1".into()));
    }
    window_offsets(n, stride)
        .into_iter()
        .map(|o| window_at(trace, trace_id, o, norm))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sequence>,
    pub validation: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub seed: u64,
    pub fractions: [f64; 3],
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn validate_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CoreError::InvalidInput(format!("split fractions must lie in [0, 1], got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidInput(format!("split fractions sum to {total}, expected 1")));
    }
    Ok(())
}

/// Deterministic stratified partition into train/validation/test.
///
/// Each label group is shuffled, then cut at cumulative quotas taken over
/// the running total: first train against the rest, then validation against
/// test within the rest. Split sizes are exactly round(n·f) (train and
/// train + validation) and each class lands within one item of its share.
pub fn split(sequences: Vec<Sequence>, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if sequences.is_empty() {
        return Err(CoreError::InvalidInput("cannot split an empty dataset".into()));
    }
    validate_fractions(fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Label, Vec<Sequence>> = BTreeMap::new();
    for s in sequences {
        groups.entry(s.label).or_default().push(s);
    }
    let n: usize = groups.values().map(Vec::len).sum();
    let quota = |k: usize, total: usize, f: f64| (k as f64 * f * n as f64 / total.max(1) as f64).round() as usize;
    let n_train = quota(n, n, fractions[0]);
    let n_rest = n - n_train;
    let n_val = quota(n, n, fractions[0] + fractions[1]).min(n) - n_train;
    let val_share = if n_rest == 0 { 0.0 } else { n_val as f64 / n as f64 };

    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let (mut seen, mut rest_seen) = (0, 0);
    for (_, mut group) in groups {
        group.shuffle(&mut rng);
        let g_train = quota(seen + group.len(), n, fractions[0]) - quota(seen, n, fractions[0]);
        seen += group.len();
        let g_rest = group.len() - g_train;
        let g_val = quota(rest_seen + g_rest, n_rest, val_share) - quota(rest_seen, n_rest, val_share);
        rest_seen += g_rest;
        let mut rest = group.split_off(g_train);
        let tail = rest.split_off(g_val);
        train.extend(group);
        validation.extend(rest);
        test.extend(tail);
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        fractions,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    #[serde(default = "default_fractions")]
    fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Part {
    Train,
    Validation,
    Test,
}

#[derive(Serialize)]
struct LineOut<'a> {
    split: Part,
    #[serde(flatten)]
    sequence: &'a Sequence,
}

#[derive(Deserialize)]
struct LineIn {
    split: Part,
    #[serde(flatten)]
    sequence: Sequence,
}

pub fn write_dataset<W: Write>(split: &DatasetSplit, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        seed: split.seed,
        fractions: split.fractions,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (part, seqs) in [
        (Part::Train, &split.train),
        (Part::Validation, &split.validation),
        (Part::Test, &split.test),
    ] {
        for sequence in seqs {
            serde_json::to_writer(&mut out, &LineOut { split: part, sequence })?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<DatasetSplit> {
    let mut lines = BufReader::new(input).lines();
    let header_line = lines.next().transpose()?.ok_or(CoreError::MalformedLine {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| CoreError::MalformedLine {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_NAME {
        return Err(CoreError::VersionMismatch {
            found: header.format,
            expected: FORMAT_NAME.into(),
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(CoreError::VersionMismatch {
            found: header.version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed: header.seed,
        fractions: header.fractions,
    };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn = serde_json::from_str(&line).map_err(|e| CoreError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        parsed.sequence.validate().map_err(|e| CoreError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        match parsed.split {
            Part::Train => split.train.push(parsed.sequence),
            Part::Validation => split.validation.push(parsed.sequence),
            Part::Test => split.test.push(parsed.sequence),
        }
    }
    Ok(split)
}

pub fn write_dataset_file(split: &DatasetSplit, path: &Path) -> Result<()> {
    write_dataset(split, File::create(path)?)
}

pub fn read_dataset_file(path: &Path) -> Result<DatasetSplit> {
    read_dataset(File::open(path)?)
}
