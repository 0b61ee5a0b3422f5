#![allow(dead_code)]

use fiberwatch_core::trace_sim::{EventKind, EventSpec, FiberPlan};
use proptest::prelude::*;

/// One event kind with its physical parameters, placed later.
#[derive(Debug, Clone)]
pub struct Draft {
    pub kind: EventKind,
    pub loss_db: f64,
    pub reflectance_db: f64,
    pub bend_radius_mm: f64,
}

impl Draft {
    pub fn place(&self, position_m: f64) -> EventSpec {
        match self.kind {
            EventKind::Tapping => EventSpec::tapping(position_m, self.bend_radius_mm),
            EventKind::FiberCut => EventSpec::cut(position_m),
            k if k.is_reflective() => EventSpec::reflective(k, position_m, self.loss_db, self.reflectance_db),
            k => EventSpec::loss(k, position_m, self.loss_db),
        }
    }
}

pub fn draft(allow_cut: bool) -> impl Strategy<Value = Draft> {
    let kinds = if allow_cut {
        vec![
            EventKind::ConnectorReflective,
            EventKind::Reflector,
            EventKind::DirtyConnector,
            EventKind::BadSplice,
            EventKind::Splitter,
            EventKind::Tapping,
            EventKind::FiberCut,
        ]
    } else {
        vec![
            EventKind::ConnectorReflective,
            EventKind::Reflector,
            EventKind::DirtyConnector,
            EventKind::BadSplice,
            EventKind::Splitter,
            EventKind::Tapping,
        ]
    };
    (prop::sample::select(kinds), 0.0..4.0f64, -65.0..-14.0f64, 2.5..=10.0f64).prop_map(|(kind, loss_db, r, b)| Draft {
        kind,
        loss_db,
        reflectance_db: r,
        bend_radius_mm: b,
    })
}

/// A valid plan: events sorted, at least one pulse width plus a sample
/// apart, a cut (if any) last.
pub fn plan(max_events: usize, allow_cut: bool) -> impl Strategy<Value = FiberPlan> {
    (
        20.0..120.0f64,
        0.05..1.0f64,
        -5.0..5.0f64,
        prop::collection::vec((draft(allow_cut), 0.0..1.0f64), 0..=max_events),
    )
        .prop_map(|(length_m, attenuation, launch, drafts)| {
            let mut p = FiberPlan::new(length_m, Vec::new());
            p.attenuation_db_per_km = attenuation;
            p.launch_power_db = launch;
            let gap = (p.pulse_samples + 2) as f64 * p.sample_spacing_m;
            let mut pos = gap;
            for (d, jitter) in drafts {
                if pos + gap >= length_m {
                    break;
                }
                p.events.push(d.place(pos));
                if d.kind == EventKind::FiberCut {
                    break;
                }
                pos += gap * (1.0 + 3.0 * jitter);
            }
            p
        })
}
