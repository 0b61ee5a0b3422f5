//! Gate bounds, attention normalization and softmax heads over random inputs.

use fiberwatch_core::dataset::{Label, Sequence, Source, WINDOW};
use fiberwatch_core::diagnoser::{attention_weights, diagnose_batch, ABiGru, DiagConfig, Variant};
use fiberwatch_nn::{attention, gru_cell_step, rng_from_seed, GruCellParams, Matrix, MergeConvention, Rng};
use rand::Rng as _;

use crate::Outcome;

const INPUTS: usize = 10_000;
const SUM_TOLERANCE: f64 = 1e-9;
/// Magnitudes below the point where f64 rounds σ and tanh to exactly 1.
const PARAM_RANGE: f64 = 1.5;
const INPUT_RANGE: f64 = 3.0;

fn matrix(rng: &mut Rng, rows: usize, cols: usize, range: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-range..range)).collect()).unwrap()
}

fn vector(rng: &mut Rng, n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-range..range)).collect()
}

fn random_cell(rng: &mut Rng, input: usize, hidden: usize) -> GruCellParams {
    GruCellParams {
        w_z: matrix(rng, input, hidden, PARAM_RANGE),
        u_z: matrix(rng, hidden, hidden, PARAM_RANGE),
        b_z: vector(rng, hidden, PARAM_RANGE),
        w_r: matrix(rng, input, hidden, PARAM_RANGE),
        u_r: matrix(rng, hidden, hidden, PARAM_RANGE),
        b_r: vector(rng, hidden, PARAM_RANGE),
        w_h: matrix(rng, input, hidden, PARAM_RANGE),
        u_h: matrix(rng, hidden, hidden, PARAM_RANGE),
        b_h: vector(rng, hidden, PARAM_RANGE),
    }
}

/// Runs a random cell over a random sequence; every step's gates must lie
/// strictly inside their ranges.
fn gate_violations(rng: &mut Rng) -> usize {
    let (input, hidden, steps) = (rng.random_range(1..6), rng.random_range(1..8), rng.random_range(1..8));
    let params = random_cell(rng, input, hidden);
    let convention = if rng.random_bool(0.5) { MergeConvention::KeepPrevious } else { MergeConvention::TakeCandidate };
    let mut h = vec![0.0; hidden];
    let mut bad = 0;
    for _ in 0..steps {
        let x = vector(rng, input, INPUT_RANGE);
        let s = gru_cell_step(&params, &x, &h, convention).unwrap();
        let open = |v: &f64| *v > 0.0 && *v < 1.0;
        let bounded = |v: &f64| v.abs() < 1.0;
        if !(s.z.iter().all(open) && s.r.iter().all(open) && s.h.iter().all(bounded) && s.h_tilde.iter().all(bounded)) {
            bad += 1;
        }
        h = s.h;
    }
    bad
}

fn attention_deviation(rng: &mut Rng) -> f64 {
    let (steps, feat, attn) = (rng.random_range(1..32), rng.random_range(1..8), rng.random_range(1..8));
    let h = matrix(rng, steps, feat, INPUT_RANGE);
    let w_h = matrix(rng, feat, attn, PARAM_RANGE);
    let w = vector(rng, attn, PARAM_RANGE);
    let out = attention(&h, &w_h, &w).unwrap();
    let sum: f64 = out.weights.iter().sum();
    if out.weights.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return f64::INFINITY;
    }
    (sum - 1.0).abs()
}

fn random_sequence(rng: &mut Rng, i: usize) -> Sequence {
    Sequence {
        values: (0..WINDOW).map(|_| rng.random_range(0.0..=1.0)).collect(),
        gamma_db: rng.random_range(0.0..=30.0),
        label: Label::Normal,
        fault_index: None,
        source: Source {
            trace_id: format!("random-{i}"),
            offset: 0,
        },
    }
}

pub fn structural_invariants() -> Outcome {
    let rng = &mut rng_from_seed(0x1a7a);
    let gate_bad: usize = (0..INPUTS).map(|_| gate_violations(rng)).sum();
    let attn_dev = (0..INPUTS).map(|_| attention_deviation(rng)).fold(0.0, f64::max);

    // Full diagnoser heads: ten random models, a thousand inputs each.
    let (mut head_dev, mut model_attn_dev) = (0.0f64, 0.0f64);
    for m in 0..10u64 {
        let config = if m % 2 == 0 { DiagConfig::default() } else { DiagConfig::flat() };
        let variant = config.variant;
        let model = ABiGru::new(config, 500 + m);
        let seqs: Vec<Sequence> = (0..INPUTS / 10).map(|i| random_sequence(rng, i)).collect();
        for r in diagnose_batch(&model, &seqs, 0.1).unwrap() {
            let expected = if variant == Variant::Flat { 5 } else { 4 };
            let sum: f64 = r.class_probs.iter().sum();
            let dev = if r.class_probs.len() == expected && r.class_probs.iter().all(|p| (0.0..=1.0).contains(p)) {
                (sum - 1.0).abs()
            } else {
                f64::INFINITY
            };
            head_dev = head_dev.max(dev);
        }
        for s in seqs.iter().step_by(10) {
            let a = attention_weights(&model, s).unwrap();
            model_attn_dev = model_attn_dev.max((a.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let pass = gate_bad == 0 && attn_dev <= SUM_TOLERANCE && head_dev <= SUM_TOLERANCE && model_attn_dev <= SUM_TOLERANCE;
    Outcome::new(
        pass,
        format!(
            "{INPUTS} inputs each: gate violations {gate_bad}, |Σα − 1| ≤ {:.1e} (model {:.1e}), |Σp − 1| ≤ {:.1e} (tolerance 1e-9)",
            attn_dev, model_attn_dev, head_dev
        ),
    )
}
