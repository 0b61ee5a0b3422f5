//! Synthetic datasets and monitoring traces.
//!
//! Each sequence comes from its own short simulated fiber: a plan with at
//! most one event, a noise draw at an SNR sampled uniformly over the
//! configured range, and the 30-sample window around the event.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetSplit, Label, Normalization, Sequence, WINDOW};
use crate::error::{CoreError, Result};
use crate::trace_sim::{DEFAULT_PULSE_SAMPLES, 
    build_trace, inject_noise, EventKind, EventSpec, FiberPlan, NoiseConfig, OtdrTrace, DEFAULT_TAPPING_K,
    TAPPING_RADIUS_RANGE_MM,
};

/// Samples in each per-sequence fiber; the window starts at [`LEAD_SAMPLES`].
const SHORT_TRACE_SAMPLES: usize = 72;
const LEAD_SAMPLES: usize = 24;
/// Keeps the diagnosis pool independent of the anomaly pool under one seed.
const DIAG_STREAM: u64 = 0xd1a6_0000_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(CoreError::InvalidPlan(format!("{what} range [{}, {}] is invalid", self.min, self.max)))
        }
    }
}

/// Event parameter ranges used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRanges {
    pub connector_reflectance_db: Range,
    pub connector_loss_db: Range,
    pub reflector_reflectance_db: Range,
    pub dirty_reflectance_db: Range,
    pub dirty_loss_db: Range,
    pub bad_splice_loss_db: Range,
    pub bend_radius_mm: Range,
    pub tapping_k: f64,
}

impl Default for EventRanges {
    fn default() -> Self {
        Self {
            connector_reflectance_db: Range::new(-45.0, -35.0),
            connector_loss_db: Range::new(0.1, 0.5),
            reflector_reflectance_db: Range::new(-30.0, -14.0),
            dirty_reflectance_db: Range::new(-65.0, -55.0),
            dirty_loss_db: Range::new(1.0, 3.0),
            bad_splice_loss_db: Range::new(1.5, 4.0),
            bend_radius_mm: Range::new(TAPPING_RADIUS_RANGE_MM.0, TAPPING_RADIUS_RANGE_MM.1),
            tapping_k: DEFAULT_TAPPING_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Sequences in the anomaly-detection dataset.
    pub ae_size: usize,
    /// Share of normal sequences in the anomaly-detection pool.
    pub ae_normal_fraction: f64,
    /// Train (normal only) / validation / test fractions of that pool.
    pub ae_fractions: [f64; 3],
    /// Sequences in the fault-only diagnosis dataset.
    pub diag_size: usize,
    pub diag_fractions: [f64; 3],
    pub snr_db: Range,
    /// Fault indices are drawn from [margin, 29 − margin].
    pub fault_margin: usize,
    /// Share of normal windows holding a connector or reflector peak.
    pub peaked_normal_fraction: f64,
    /// Share of peaked normal windows whose peak starts before the window.
    pub edge_peak_fraction: f64,
    pub attenuation_db_per_km: f64,
    pub noise_floor_db: f64,
    pub noise: NoiseConfig,
    pub normalization: Normalization,
    pub events: EventRanges,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            ae_size: 48_000,
            ae_normal_fraction: 0.5,
            ae_fractions: [0.7, 0.15, 0.15],
            diag_size: 62_000,
            diag_fractions: [0.6, 0.2, 0.2],
            snr_db: Range::new(0.0, 30.0),
            fault_margin: 3,
            peaked_normal_fraction: 0.5,
            edge_peak_fraction: 0.3,
            attenuation_db_per_km: 0.2,
            noise_floor_db: -40.0,
            noise: NoiseConfig::default(),
            normalization: Normalization::default(),
            events: EventRanges::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidPlan(m));
        if !(0.0..=1.0).contains(&self.ae_normal_fraction) {
            return bad(format!("ae_normal_fraction {} outside [0, 1]", self.ae_normal_fraction));
        }
        if !(0.0..=1.0).contains(&self.peaked_normal_fraction) {
            return bad(format!("peaked_normal_fraction {} outside [0, 1]", self.peaked_normal_fraction));
        }
        if !(0.0..=1.0).contains(&self.edge_peak_fraction) {
            return bad(format!("edge_peak_fraction {} outside [0, 1]", self.edge_peak_fraction));
        }
        if 2 * self.fault_margin >= WINDOW {
            return bad(format!("fault_margin {} leaves no valid fault index", self.fault_margin));
        }
        self.snr_db.validate("snr_db")?;
        if self.snr_db.min < 0.0 {
            return bad("snr_db range must be non-negative".into());
        }
        let e = &self.events;
        for (name, r) in [
            ("connector_reflectance_db", e.connector_reflectance_db),
            ("connector_loss_db", e.connector_loss_db),
            ("reflector_reflectance_db", e.reflector_reflectance_db),
            ("dirty_reflectance_db", e.dirty_reflectance_db),
            ("dirty_loss_db", e.dirty_loss_db),
            ("bad_splice_loss_db", e.bad_splice_loss_db),
            ("bend_radius_mm", e.bend_radius_mm),
        ] {
            r.validate(name)?;
        }
        if !(self.attenuation_db_per_km.is_finite() && self.attenuation_db_per_km >= 0.0) {
            return bad("attenuation must be finite and non-negative".into());
        }
        Ok(())
    }

    fn plan(&self, length_m: f64, events: Vec<EventSpec>) -> FiberPlan {
        FiberPlan {
            attenuation_db_per_km: self.attenuation_db_per_km,
            noise_floor_db: self.noise_floor_db,
            ..FiberPlan::new(length_m, events)
        }
    }
}

fn fault_kind(label: Label) -> Option<EventKind> {
    match label {
        Label::Normal => None,
        Label::Eavesdropping => Some(EventKind::Tapping),
        Label::BadSplice => Some(EventKind::BadSplice),
        Label::DirtyConnector => Some(EventKind::DirtyConnector),
        Label::FiberCut => Some(EventKind::FiberCut),
    }
}

/// A fault event of the given class at `position_m`.
pub fn fault_event(label: Label, position_m: f64, ranges: &EventRanges, rng: &mut ChaCha8Rng) -> Option<EventSpec> {
    let kind = fault_kind(label)?;
    Some(match kind {
        EventKind::Tapping => {
            let r = ranges.bend_radius_mm.sample(rng);
            EventSpec {
                loss_db: crate::trace_sim::tapping_loss_db(r, ranges.tapping_k),
                ..EventSpec::tapping(position_m, r)
            }
        }
        EventKind::BadSplice => EventSpec::loss(kind, position_m, ranges.bad_splice_loss_db.sample(rng)),
        EventKind::DirtyConnector => {
            let loss = ranges.dirty_loss_db.sample(rng);
            EventSpec::reflective(kind, position_m, loss, ranges.dirty_reflectance_db.sample(rng))
        }
        _ => EventSpec::cut(position_m),
    })
}

/// A normal link component (connector or reflector) at `position_m`.
pub fn normal_event(position_m: f64, ranges: &EventRanges, rng: &mut ChaCha8Rng) -> EventSpec {
    if rng.random_bool(0.5) {
        let loss = ranges.connector_loss_db.sample(rng);
        EventSpec::reflective(
            EventKind::ConnectorReflective,
            position_m,
            loss,
            ranges.connector_reflectance_db.sample(rng),
        )
    } else {
        EventSpec::reflective(EventKind::Reflector, position_m, 0.0, ranges.reflector_reflectance_db.sample(rng))
    }
}

/// One labeled window drawn from its own short simulated fiber.
pub fn sample_sequence(label: Label, config: &GeneratorConfig, trace_id: &str, rng: &mut ChaCha8Rng) -> Result<Sequence> {
    let spacing = crate::trace_sim::default_sample_spacing_m();
    let length = (SHORT_TRACE_SAMPLES - 1) as f64 * spacing;
    let events = if label.is_fault() {
        let j = rng.random_range(config.fault_margin..WINDOW - config.fault_margin);
        let pos = (LEAD_SAMPLES + j) as f64 * spacing;
        vec![fault_event(label, pos, &config.events, rng).expect("fault label")]
    } else if !rng.random_bool(config.peaked_normal_fraction) {
        vec![]
    } else {
        // Peaks may start before the window or spill past its end; tails
        // entering at the window start are oversampled.
        let pulse = DEFAULT_PULSE_SAMPLES as i64;
        let j = if rng.random_bool(config.edge_peak_fraction) {
            rng.random_range(1 - pulse..-4)
        } else {
            rng.random_range(1 - pulse..WINDOW as i64)
        };
        let pos = (LEAD_SAMPLES as i64 + j) as f64 * spacing;
        vec![normal_event(pos, &config.events, rng)]
    };
    let clean = build_trace(&config.plan(length, events))?;
    let snr = config.snr_db.sample(rng);
    let noisy = inject_noise(&clean, snr, rng.random(), &config.noise)?;
    let seq = dataset::window_at(&noisy, trace_id, LEAD_SAMPLES, config.normalization)?;
    debug_assert_eq!(seq.label, label);
    Ok(seq)
}

/// Labels cycling through `classes` in equal shares.
fn balanced_labels(classes: &[Label], n: usize) -> impl Iterator<Item = Label> + '_ {
    (0..n).map(move |i| classes[i % classes.len()])
}

/// Anomaly-detection dataset: the train split keeps normal sequences only,
/// validation and test are mixed.
pub fn generate_ae_dataset(config: &GeneratorConfig, seed: u64) -> Result<DatasetSplit> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_normal = (config.ae_size as f64 * config.ae_normal_fraction).round() as usize;
    let labels: Vec<Label> = std::iter::repeat_n(Label::Normal, n_normal)
        .chain(balanced_labels(&Label::FAULTS, config.ae_size - n_normal))
        .collect();
    let pool = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sample_sequence(l, config, &format!("ae-{i}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut split = dataset::split(pool, config.ae_fractions, seed)?;
    split.train.retain(|s| s.label == Label::Normal);
    Ok(split)
}

/// Fault-only diagnosis dataset with the four classes in equal shares.
pub fn generate_diag_dataset(config: &GeneratorConfig, seed: u64) -> Result<DatasetSplit> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DIAG_STREAM);
    let pool = balanced_labels(&Label::FAULTS, config.diag_size)
        .enumerate()
        .map(|(i, l)| sample_sequence(l, config, &format!("diag-{i}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    dataset::split(pool, config.diag_fractions, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorTraceSpec {
    pub length_m: f64,
    pub fault: Option<Label>,
    pub snr_db: f64,
    /// Add a connector ahead of the fault.
    pub with_connector: bool,
}

/// A longer trace for end-to-end monitoring, with an optional connector in
/// the first half and the fault (if any) in the second half.
pub fn monitor_trace(spec: &MonitorTraceSpec, config: &GeneratorConfig, seed: u64) -> Result<(FiberPlan, OtdrTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spec.length_m;
    if l < 20.0 {
        return Err(CoreError::InvalidPlan(format!("monitor traces need at least 20 m, got {l}")));
    }
    let mut events = Vec::new();
    if spec.with_connector {
        events.push(normal_event(rng.random_range(0.1 * l..0.4 * l), &config.events, &mut rng));
    }
    if let Some(label) = spec.fault {
        let pos = rng.random_range(0.55 * l..0.9 * l);
        events.extend(fault_event(label, pos, &config.events, &mut rng));
    }
    let plan = config.plan(l, events);
    let clean = build_trace(&plan)?;
    let noisy = inject_noise(&clean, spec.snr_db, rng.random(), &config.noise)?;
    Ok((plan, noisy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            ae_size: 200,
            diag_size: 200,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn sequences_are_valid_and_labeled() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (i, &label) in Label::ALL.iter().cycle().take(100).enumerate() {
            let s = sample_sequence(label, &cfg, &format!("s{i}"), &mut rng).unwrap();
            s.validate().unwrap();
            assert_eq!(s.label, label);
            if let Some(j) = s.fault_index {
                assert!((3..=26).contains(&j));
            }
            assert!((0.0..=30.0).contains(&s.gamma_db));
        }
    }

    #[test]
    fn datasets_are_deterministic_and_shaped() {
        let cfg = small();
        let a = generate_ae_dataset(&cfg, 5).unwrap();
        assert_eq!(a, generate_ae_dataset(&cfg, 5).unwrap());
        assert!(a.train.iter().all(|s| s.label == Label::Normal));
        assert!(a.test.iter().any(|s| s.label.is_fault()));
        assert!(a.validation.iter().any(|s| s.label.is_fault()));

        let d = generate_diag_dataset(&cfg, 5).unwrap();
        let all: Vec<&Sequence> = d.train.iter().chain(&d.validation).chain(&d.test).collect();
        assert_eq!(all.len(), 200);
        for l in Label::FAULTS {
            assert_eq!(all.iter().filter(|s| s.label == l).count(), 50);
        }
    }

    #[test]
    fn monitor_traces_carry_one_fault() {
        let cfg = small();
        let spec = MonitorTraceSpec {
            length_m: 100.0,
            fault: Some(Label::FiberCut),
            snr_db: 20.0,
            with_connector: true,
        };
        let (plan, trace) = monitor_trace(&spec, &cfg, 3).unwrap();
        assert_eq!(plan.events.len(), 2);
        assert_eq!(trace.cut_index(), Some(plan.event_index(&plan.events[1])));
    }
}
