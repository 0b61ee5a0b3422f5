//! Synthetic OTDR traces.
//!
//! The clean trace is a dB-linear ramp with two-way fiber loss,
//! `P(d) = launch − 2·α·d`, with event signatures superimposed in dB:
//!
//! * loss-only events (splitter, tapping, bad splice) step the trace down by
//!   `loss_db` from the event sample onwards;
//! * reflective events (connector, dirty connector, reflector) add the same
//!   step plus a rectangular peak one pulse width long;
//! * a fiber cut sends every sample from the cut onwards to the noise floor.
//!
//! Noise is Gaussian in linear power and is scaled against the median
//! backscatter power before the cut.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;
pub const DEFAULT_GROUP_INDEX: f64 = 1.468;
pub const DEFAULT_SAMPLING_INTERVAL_S: f64 = 1e-9;
/// 10 ns pulse at 1 ns sampling.
pub const DEFAULT_PULSE_SAMPLES: usize = 10;
pub const DEFAULT_PEAK_CEILING_DB: f64 = 15.0;
/// Rayleigh backscatter coefficient for a 1 ns pulse.
pub const BACKSCATTER_COEFFICIENT_DB: f64 = -80.0;
/// Bend-loss constant for tapping, in dB·mm.
pub const DEFAULT_TAPPING_K: f64 = 2.5;
pub const TAPPING_RADIUS_RANGE_MM: (f64, f64) = (2.5, 10.0);
/// Noise-variance reduction from record averaging, in dB. SNR targets are
/// quoted per record; the averaged trace is this much cleaner.
pub const DEFAULT_AVERAGING_GAIN_DB: f64 = 30.0;

/// Distance covered by one sample: `c·Δt / (2·n_g)`.
pub fn sample_spacing_m(sampling_interval_s: f64, group_index: f64) -> f64 {
    SPEED_OF_LIGHT_M_PER_S * sampling_interval_s / (2.0 * group_index)
}

/// 1 ns sampling in fiber with group index 1.468, about 0.1021 m.
pub fn default_sample_spacing_m() -> f64 {
    sample_spacing_m(DEFAULT_SAMPLING_INTERVAL_S, DEFAULT_GROUP_INDEX)
}

pub fn index_to_distance(index: f64, sample_spacing_m: f64) -> f64 {
    index * sample_spacing_m
}

/// Bend loss of a clip-on coupler: `clamp(k / r, 0.02, 2.0)` dB.
pub fn tapping_loss_db(bend_radius_mm: f64, k: f64) -> f64 {
    (k / bend_radius_mm).clamp(0.02, 2.0)
}

/// Height of a reflective peak for a given reflectance, in dB above the
/// local backscatter level, before ceiling clamping.
pub fn reflection_peak_db(reflectance_db: f64, pulse_width_ns: f64) -> f64 {
    let ratio = 10f64.powf((reflectance_db - BACKSCATTER_COEFFICIENT_DB) / 10.0) / pulse_width_ns;
    5.0 * (1.0 + ratio).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ConnectorReflective,
    Reflector,
    Splitter,
    Tapping,
    BadSplice,
    DirtyConnector,
    FiberCut,
}

impl EventKind {
    pub fn is_reflective(self) -> bool {
        matches!(
            self,
            EventKind::ConnectorReflective | EventKind::DirtyConnector | EventKind::Reflector
        )
    }

    /// Events that count as faults rather than normal link components.
    pub fn is_fault(self) -> bool {
        matches!(
            self,
            EventKind::Tapping | EventKind::BadSplice | EventKind::DirtyConnector | EventKind::FiberCut
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::ConnectorReflective => "connector_reflective",
            EventKind::Reflector => "reflector",
            EventKind::Splitter => "splitter",
            EventKind::Tapping => "tapping",
            EventKind::BadSplice => "bad_splice",
            EventKind::DirtyConnector => "dirty_connector",
            EventKind::FiberCut => "fiber_cut",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub position_m: f64,
    #[serde(default)]
    pub loss_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflectance_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bend_radius_mm: Option<f64>,
}

impl EventSpec {
    pub fn loss(kind: EventKind, position_m: f64, loss_db: f64) -> Self {
        Self {
            kind,
            position_m,
            loss_db,
            reflectance_db: None,
            bend_radius_mm: None,
        }
    }

    pub fn reflective(kind: EventKind, position_m: f64, loss_db: f64, reflectance_db: f64) -> Self {
        Self {
            kind,
            position_m,
            loss_db,
            reflectance_db: Some(reflectance_db),
            bend_radius_mm: None,
        }
    }

    /// Tapping event whose loss follows from the bend radius.
    pub fn tapping(position_m: f64, bend_radius_mm: f64) -> Self {
        Self {
            kind: EventKind::Tapping,
            position_m,
            loss_db: tapping_loss_db(bend_radius_mm, DEFAULT_TAPPING_K),
            reflectance_db: None,
            bend_radius_mm: Some(bend_radius_mm),
        }
    }

    pub fn cut(position_m: f64) -> Self {
        Self::loss(EventKind::FiberCut, position_m, 0.0)
    }
}

fn default_pulse_samples() -> usize {
    DEFAULT_PULSE_SAMPLES
}

fn default_peak_ceiling() -> f64 {
    DEFAULT_PEAK_CEILING_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberPlan {
    pub length_m: f64,
    pub attenuation_db_per_km: f64,
    pub launch_power_db: f64,
    pub sample_spacing_m: f64,
    pub events: Vec<EventSpec>,
    pub noise_floor_db: f64,
    /// Width of reflective peaks, in samples.
    #[serde(default = "default_pulse_samples")]
    pub pulse_samples: usize,
    #[serde(default = "default_peak_ceiling")]
    pub peak_ceiling_db: f64,
}

impl FiberPlan {
    pub fn new(length_m: f64, events: Vec<EventSpec>) -> Self {
        Self {
            length_m,
            attenuation_db_per_km: 0.2,
            launch_power_db: 0.0,
            sample_spacing_m: default_sample_spacing_m(),
            events,
            noise_floor_db: -40.0,
            pulse_samples: DEFAULT_PULSE_SAMPLES,
            peak_ceiling_db: DEFAULT_PEAK_CEILING_DB,
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.length_m / self.sample_spacing_m + 1e-9).floor() as usize + 1
    }

    pub fn event_index(&self, event: &EventSpec) -> usize {
        (event.position_m / self.sample_spacing_m).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidPlan(m));
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return bad(format!("length_m must be positive, got {}", self.length_m));
        }
        if !(self.sample_spacing_m.is_finite() && self.sample_spacing_m > 0.0) {
            return bad(format!("sample_spacing_m must be positive, got {}", self.sample_spacing_m));
        }
        for (name, v) in [
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("launch_power_db", self.launch_power_db),
            ("noise_floor_db", self.noise_floor_db),
            ("peak_ceiling_db", self.peak_ceiling_db),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.pulse_samples == 0 {
            return bad("pulse_samples must be at least 1".into());
        }
        let mut cut_seen = false;
        let mut prev: Option<(f64, usize)> = None;
        for e in &self.events {
            if !(e.position_m > 0.0 && e.position_m < self.length_m) {
                return bad(format!("{} at {} m lies outside (0, {})", e.kind, e.position_m, self.length_m));
            }
            if cut_seen {
                return bad(format!("{} at {} m lies beyond the fiber cut", e.kind, e.position_m));
            }
            if !(e.loss_db.is_finite() && e.loss_db >= 0.0) {
                return bad(format!("{} loss must be finite and non-negative, got {}", e.kind, e.loss_db));
            }
            if e.kind.is_reflective() {
                match e.reflectance_db {
                    Some(r) if r.is_finite() && r < 0.0 => {}
                    other => return bad(format!("{} needs a negative reflectance_db, got {other:?}", e.kind)),
                }
            }
            if e.kind == EventKind::Tapping {
                let (lo, hi) = TAPPING_RADIUS_RANGE_MM;
                match e.bend_radius_mm {
                    Some(r) if (lo..=hi).contains(&r) => {}
                    other => return bad(format!("tapping bend radius must lie in [{lo}, {hi}] mm, got {other:?}")),
                }
            }
            let index = self.event_index(e);
            if let Some((p, pi)) = prev {
                if e.position_m < p {
                    return bad("events must be sorted by position".into());
                }
                if index < pi + self.pulse_samples {
                    return Err(CoreError::OverlappingEvents {
                        first: pi,
                        second: index,
                        pulse: self.pulse_samples,
                    });
                }
            }
            prev = Some((e.position_m, index));
            cut_seen |= e.kind == EventKind::FiberCut;
        }
        Ok(())
    }
}

/// SNR of a trace: a finite dB value, or no noise at all.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Snr {
    #[default]
    Noiseless,
    Db(f64),
}

impl Snr {
    pub fn db(self) -> Option<f64> {
        match self {
            Snr::Noiseless => None,
            Snr::Db(v) => Some(v),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Noiseless => s.serialize_str("noiseless"),
            Snr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr::Db(v)),
            Raw::Text(t) if t == "noiseless" => Ok(Snr::Noiseless),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"noiseless\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: EventKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtdrTrace {
    pub samples_db: Vec<f64>,
    pub sample_spacing_m: f64,
    pub snr_db: Snr,
    pub annotations: Vec<Annotation>,
}

impl OtdrTrace {
    /// Index of the fiber cut, if any.
    pub fn cut_index(&self) -> Option<usize> {
        self.annotations
            .iter()
            .find(|a| a.kind == EventKind::FiberCut)
            .map(|a| a.index)
    }

    /// Samples before the cut (the whole trace when there is none).
    pub fn pre_cut_len(&self) -> usize {
        self.cut_index().unwrap_or(self.samples_db.len()).min(self.samples_db.len())
    }
}

/// Per-event signature in dB, to be added to the baseline.
fn event_signature(plan: &FiberPlan, event: &EventSpec, n: usize) -> Vec<f64> {
    let k = plan.event_index(event).min(n);
    let mut sig = vec![0.0; n];
    for v in &mut sig[k..] {
        *v -= event.loss_db;
    }
    if event.kind.is_reflective() {
        let r = event.reflectance_db.expect("validated");
        let height = reflection_peak_db(r, plan.pulse_samples as f64).min(plan.peak_ceiling_db);
        for v in sig.iter_mut().skip(k).take(plan.pulse_samples) {
            *v += height;
        }
    }
    sig
}

/// The noiseless trace of a plan.
pub fn build_trace(plan: &FiberPlan) -> Result<OtdrTrace> {
    plan.validate()?;
    let n = plan.sample_count();
    let slope = 2.0 * plan.attenuation_db_per_km / 1000.0;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| plan.launch_power_db - slope * index_to_distance(i as f64, plan.sample_spacing_m))
        .collect();
    let mut annotations = Vec::with_capacity(plan.events.len());
    for e in &plan.events {
        let index = plan.event_index(e);
        annotations.push(Annotation { kind: e.kind, index });
        if e.kind == EventKind::FiberCut {
            for v in &mut samples[index.min(n)..] {
                *v = plan.noise_floor_db;
            }
        } else {
            for (v, s) in samples.iter_mut().zip(event_signature(plan, e, n)) {
                *v += s;
            }
        }
    }
    Ok(OtdrTrace {
        samples_db: samples,
        sample_spacing_m: plan.sample_spacing_m,
        snr_db: Snr::Noiseless,
        annotations,
    })
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Linear power never drops below this level after noise is added.
    pub noise_floor_db: f64,
    /// Noise variance is divided by this gain after SNR scaling.
    pub averaging_gain_db: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            noise_floor_db: -40.0,
            averaging_gain_db: DEFAULT_AVERAGING_GAIN_DB,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reference signal power: squared median linear power before the cut,
/// reduced by the averaging gain.
pub fn reference_power(clean: &OtdrTrace, config: &NoiseConfig) -> f64 {
    let mut lin: Vec<f64> = clean.samples_db[..clean.pre_cut_len().max(1)]
        .iter()
        .map(|&d| db_to_linear(d))
        .collect();
    let m = median(&mut lin);
    m * m / db_to_linear(config.averaging_gain_db)
}

/// Adds seeded Gaussian noise in linear power. The noise is scaled so the
/// realized pre-cut SNR equals `target_snr_db` exactly; `+∞` returns the
/// trace unchanged.
pub fn inject_noise(trace: &OtdrTrace, target_snr_db: f64, seed: u64, config: &NoiseConfig) -> Result<OtdrTrace> {
    if let Snr::Db(v) = trace.snr_db {
        return Err(CoreError::AlreadyNoisy(v));
    }
    if target_snr_db == f64::INFINITY {
        return Ok(trace.clone());
    }
    if !target_snr_db.is_finite() {
        return Err(CoreError::InvalidSnr(target_snr_db));
    }
    let n = trace.samples_db.len();
    let pre = trace.pre_cut_len();
    let variance = reference_power(trace, config) / db_to_linear(target_snr_db);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let region = if pre > 0 { &noise[..pre] } else { &noise[..] };
    let mean_square = region.iter().map(|v| v * v).sum::<f64>() / region.len().max(1) as f64;
    let scale = if mean_square > 0.0 { (variance / mean_square).sqrt() } else { 0.0 };
    noise.iter_mut().for_each(|v| *v *= scale);

    let floor = db_to_linear(config.noise_floor_db);
    let samples_db = trace
        .samples_db
        .iter()
        .zip(&noise)
        .map(|(&d, &e)| linear_to_db((db_to_linear(d) + e).max(floor)))
        .collect();
    Ok(OtdrTrace {
        samples_db,
        sample_spacing_m: trace.sample_spacing_m,
        snr_db: Snr::Db(target_snr_db),
        annotations: trace.annotations.clone(),
    })
}

/// SNR re-measured from the residual between a noisy trace and its clean
/// source, over the pre-cut region.
pub fn estimate_snr_db(clean: &OtdrTrace, noisy: &OtdrTrace, config: &NoiseConfig) -> f64 {
    let pre = clean.pre_cut_len().max(1);
    let residual_power = clean.samples_db[..pre]
        .iter()
        .zip(&noisy.samples_db[..pre])
        .map(|(&c, &n)| {
            let r = db_to_linear(n) - db_to_linear(c);
            r * r
        })
        .sum::<f64>()
        / pre as f64;
    linear_to_db(reference_power(clean, config) / residual_power)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_1km(events: Vec<EventSpec>) -> FiberPlan {
        FiberPlan {
            sample_spacing_m: 1.0,
            ..FiberPlan::new(1000.0, events)
        }
    }

    #[test]
    fn event_free_trace_is_linear_two_way_ramp() {
        let t = build_trace(&plan_1km(vec![])).unwrap();
        assert_eq!(t.samples_db.len(), 1001);
        assert!((t.samples_db[1000] + 0.4).abs() < 1e-12);
        let step = t.samples_db[1] - t.samples_db[0];
        for w in t.samples_db.windows(2) {
            assert!(((w[1] - w[0]) - step).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_splice_is_a_step() {
        let base = build_trace(&plan_1km(vec![])).unwrap();
        let t = build_trace(&plan_1km(vec![EventSpec::loss(EventKind::BadSplice, 500.0, 0.5)])).unwrap();
        for i in 0..1001 {
            let d = base.samples_db[i] - t.samples_db[i];
            let expected = if i >= 500 { 0.5 } else { 0.0 };
            assert!((d - expected).abs() < 1e-12, "sample {i}");
        }
        assert_eq!(t.annotations, vec![Annotation { kind: EventKind::BadSplice, index: 500 }]);
    }

    #[test]
    fn cut_drops_to_noise_floor() {
        let t = build_trace(&plan_1km(vec![EventSpec::cut(800.0)])).unwrap();
        assert!(t.samples_db[800..].iter().all(|&v| v == -40.0));
        assert!(t.samples_db[799] > -1.0);
    }

    #[test]
    fn reflective_peak_spans_pulse_width() {
        let plan = plan_1km(vec![EventSpec::reflective(EventKind::ConnectorReflective, 300.0, 0.3, -40.0)]);
        let base = build_trace(&plan_1km(vec![])).unwrap();
        let t = build_trace(&plan).unwrap();
        let h = reflection_peak_db(-40.0, 10.0).min(DEFAULT_PEAK_CEILING_DB);
        for i in 300..310 {
            assert!((t.samples_db[i] - base.samples_db[i] - (h - 0.3)).abs() < 1e-12);
        }
        assert!((t.samples_db[310] - base.samples_db[310] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn plan_validation() {
        let overlap = plan_1km(vec![
            EventSpec::loss(EventKind::BadSplice, 100.0, 1.0),
            EventSpec::loss(EventKind::BadSplice, 105.0, 1.0),
        ]);
        assert!(matches!(build_trace(&overlap), Err(CoreError::OverlappingEvents { .. })));
        let after_cut = plan_1km(vec![EventSpec::cut(100.0), EventSpec::loss(EventKind::BadSplice, 300.0, 1.0)]);
        assert!(build_trace(&after_cut).is_err());
        let unsorted = plan_1km(vec![
            EventSpec::loss(EventKind::BadSplice, 300.0, 1.0),
            EventSpec::loss(EventKind::BadSplice, 100.0, 1.0),
        ]);
        assert!(build_trace(&unsorted).is_err());
        let bad_radius = plan_1km(vec![EventSpec {
            bend_radius_mm: Some(1.0),
            ..EventSpec::tapping(100.0, 5.0)
        }]);
        assert!(build_trace(&bad_radius).is_err());
        let outside = plan_1km(vec![EventSpec::loss(EventKind::BadSplice, 1000.0, 1.0)]);
        assert!(build_trace(&outside).is_err());
        let no_reflectance = plan_1km(vec![EventSpec::loss(EventKind::DirtyConnector, 100.0, 1.0)]);
        assert!(build_trace(&no_reflectance).is_err());
    }

    #[test]
    fn tapping_loss_follows_bend_radius() {
        assert_eq!(tapping_loss_db(2.5, DEFAULT_TAPPING_K), 1.0);
        assert_eq!(tapping_loss_db(10.0, DEFAULT_TAPPING_K), 0.25);
        assert_eq!(tapping_loss_db(0.1, DEFAULT_TAPPING_K), 2.0);
    }

    #[test]
    fn distance_conversion() {
        assert_eq!(index_to_distance(0.0, 0.1021), 0.0);
        assert!((index_to_distance(10.0, 0.1021) - 1.021).abs() < 1e-12);
        assert!((default_sample_spacing_m() - 0.10211).abs() < 1e-5);
    }

    #[test]
    fn noise_contract() {
        let cfg = NoiseConfig::default();
        let clean = build_trace(&FiberPlan::new(500.0, vec![EventSpec::cut(400.0)])).unwrap();
        assert_eq!(inject_noise(&clean, f64::INFINITY, 1, &cfg).unwrap(), clean);
        let a = inject_noise(&clean, 12.0, 99, &cfg).unwrap();
        let b = inject_noise(&clean, 12.0, 99, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snr_db, Snr::Db(12.0));
        assert!(matches!(inject_noise(&a, 12.0, 1, &cfg), Err(CoreError::AlreadyNoisy(_))));
        assert!(matches!(inject_noise(&clean, f64::NAN, 1, &cfg), Err(CoreError::InvalidSnr(_))));
        assert!(a.samples_db.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn snr_json_forms() {
        assert_eq!(serde_json::to_string(&Snr::Noiseless).unwrap(), "\"noiseless\"");
        assert_eq!(serde_json::from_str::<Snr>("12.5").unwrap(), Snr::Db(12.5));
        assert!(serde_json::from_str::<Snr>("\"loud\"").is_err());
    }
}
