//! Analytic gradients of every layer kind and both full graphs against
//! central finite differences.

use std::time::Instant;

use fiberwatch_core::anomaly::{AeConfig, GruAe};
use fiberwatch_core::diagnoser::{ABiGru, DiagConfig, DiagExample, Variant};
use fiberwatch_core::training::Trainable;
use fiberwatch_nn::{
    finite_diff_grad, max_relative_error, mse_grad, mse_loss, rng_from_seed, softmax_cross_entropy, Activation,
    Attention, BiGru, Dense, Direction, GruLayer, LossWeights, Matrix, MergeConvention, Module, Param, Rng, SeqBatch,
};
use rand::Rng as _;

use crate::Outcome;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const CONFIGURATIONS: u64 = 100;
const BUDGET_SECS: f64 = 120.0;

#[derive(Default)]
struct Worst(Vec<(&'static str, f64)>);

impl Worst {
    fn record(&mut self, kind: &'static str, err: f64) {
        match self.0.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, e)) => *e = e.max(err),
            None => self.0.push((kind, err)),
        }
    }

    fn max(&self) -> f64 {
        self.0.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn seq(rng: &mut Rng, steps: usize, batch: usize, dim: usize, lo: f64, hi: f64) -> SeqBatch {
    let mut s = SeqBatch::zeros(steps, batch, dim);
    s.data.iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    s
}

fn vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn jitter<M: Module>(m: &mut M, rng: &mut Rng) {
    for (_, p) in m.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error over all parameters whose analytic gradients are
/// currently stored in `model`.
fn param_error<M: Module>(model: &mut M, loss: impl Fn(&M) -> f64) -> f64 {
    let analytic: Vec<(String, Vec<f64>)> = model.params().into_iter().map(|(n, p)| (n, p.grad.data().to_vec())).collect();
    analytic
        .into_iter()
        .map(|(name, grad)| {
            let numeric = finite_diff_grad(model, &loss, &name, STEP).expect("known parameter");
            max_relative_error(&grad, &numeric, FLOOR)
        })
        .fold(0.0, f64::max)
}

fn input_error(x: &SeqBatch, analytic: &[f64], loss: impl Fn(&SeqBatch) -> f64) -> f64 {
    let mut x = x.clone();
    let numeric: Vec<f64> = (0..x.data.len())
        .map(|i| {
            let v = x.data[i];
            x.data[i] = v + STEP;
            let plus = loss(&x);
            x.data[i] = v - STEP;
            let minus = loss(&x);
            x.data[i] = v;
            (plus - minus) / (2.0 * STEP)
        })
        .collect();
    max_relative_error(analytic, &numeric, FLOOR)
}

fn gru(rng: &mut Rng, seed: u64) -> f64 {
    let (input, hidden, steps, batch) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..7), rng.random_range(1..4));
    let convention = if seed.is_multiple_of(2) { MergeConvention::KeepPrevious } else { MergeConvention::TakeCandidate };
    let direction = if rng.random_bool(0.5) { Direction::Forward } else { Direction::Backward };
    let mut layer = GruLayer::new(input, hidden, convention, rng);
    jitter(&mut layer, rng);
    let x = seq(rng, steps, batch, input, -1.5, 1.5);
    let probe = vector(rng, steps * batch * hidden);
    layer.zero_grad();
    let (_, cache) = layer.forward(&x, direction).unwrap();
    let d_out = SeqBatch { data: probe.clone(), ..SeqBatch::zeros(steps, batch, hidden) };
    let dx = layer.backward(&cache, &d_out).unwrap();
    let p = param_error(&mut layer, |l| dot(&l.infer(&x, direction).unwrap().data, &probe));
    p.max(input_error(&x, &dx.data, |x| dot(&layer.infer(x, direction).unwrap().data, &probe)))
}

fn bigru(rng: &mut Rng) -> f64 {
    let (input, hidden, steps, batch) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..7), rng.random_range(1..4));
    let mut layer = BiGru::new(input, hidden, MergeConvention::KeepPrevious, rng);
    jitter(&mut layer, rng);
    let x = seq(rng, steps, batch, input, -1.5, 1.5);
    let probe = vector(rng, steps * batch * hidden);
    layer.zero_grad();
    let (_, cache) = layer.forward(&x).unwrap();
    let d_out = SeqBatch { data: probe.clone(), ..SeqBatch::zeros(steps, batch, hidden) };
    let dx = layer.backward(&cache, &d_out).unwrap();
    let p = param_error(&mut layer, |l| dot(&l.infer(&x).unwrap().data, &probe));
    p.max(input_error(&x, &dx.data, |x| dot(&layer.infer(x).unwrap().data, &probe)))
}

fn attention(rng: &mut Rng) -> f64 {
    let (feat, attn, steps, batch) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(2..8), rng.random_range(1..4));
    let mut layer = Attention::new(feat, attn, rng);
    jitter(&mut layer, rng);
    let h = seq(rng, steps, batch, feat, -1.5, 1.5);
    let probe = vector(rng, batch * feat);
    layer.zero_grad();
    let (_, cache) = layer.forward(&h).unwrap();
    let dh = layer.backward(&cache, &Matrix::from_vec(batch, feat, probe.clone()).unwrap()).unwrap();
    let p = param_error(&mut layer, |l| dot(&l.forward(&h).unwrap().0.data, &probe));
    p.max(input_error(&h, &dh.data, |h| dot(&layer.forward(h).unwrap().0.data, &probe)))
}

fn dense(rng: &mut Rng, act: Activation) -> f64 {
    let (input, output, batch) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..4));
    let mut layer = Dense::new(input, output, act, rng);
    jitter(&mut layer, rng);
    let x = Matrix::from_vec(batch, input, vector(rng, batch * input)).unwrap();
    let probe = vector(rng, batch * output);
    layer.zero_grad();
    let (_, cache) = layer.forward(&x).unwrap();
    layer.backward(&cache, &Matrix::from_vec(batch, output, probe.clone()).unwrap()).unwrap();
    param_error(&mut layer, |l| dot(&l.infer(&x).unwrap().data, &probe))
}

/// Classification and regression heads on a shared feature vector.
struct Heads {
    layers: [Dense; 4],
}

impl Module for Heads {
    fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }
}

fn heads(rng: &mut Rng) -> f64 {
    let (feat, batch, classes) = (rng.random_range(2..7), rng.random_range(1..5), rng.random_range(2..6));
    let (ch, rh) = (rng.random_range(2..6), rng.random_range(2..6));
    let mut m = Heads {
        layers: [
            Dense::new(feat, ch, Activation::Elu, rng),
            Dense::new(ch, classes, Activation::Identity, rng),
            Dense::new(feat, rh, Activation::Elu, rng),
            Dense::new(rh, 1, Activation::Identity, rng),
        ],
    };
    let x = Matrix::from_vec(batch, feat, vector(rng, batch * feat)).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
    let (l1, l2) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
    let loss = |m: &Heads| {
        let logits = m.layers[1].infer(&m.layers[0].infer(&x).unwrap()).unwrap();
        let reg = m.layers[3].infer(&m.layers[2].infer(&x).unwrap()).unwrap();
        l1 * softmax_cross_entropy(&logits, &labels).unwrap().0 + l2 * mse_loss(&targets, &reg.data).unwrap()
    };
    m.zero_grad();
    let (hid, c0) = m.layers[0].forward(&x).unwrap();
    let (logits, c1) = m.layers[1].forward(&hid).unwrap();
    let (_, _, mut dl) = softmax_cross_entropy(&logits, &labels).unwrap();
    dl.data.iter_mut().for_each(|g| *g *= l1);
    let dh = m.layers[1].backward(&c1, &dl).unwrap();
    m.layers[0].backward(&c0, &dh).unwrap();
    let (rhid, c2) = m.layers[2].forward(&x).unwrap();
    let (pred, c3) = m.layers[3].forward(&rhid).unwrap();
    let mut dp = Matrix::from_vec(batch, 1, mse_grad(&targets, &pred.data).unwrap()).unwrap();
    dp.data.iter_mut().for_each(|g| *g *= l2);
    let dr = m.layers[3].backward(&c3, &dp).unwrap();
    m.layers[2].backward(&c2, &dr).unwrap();
    param_error(&mut m, loss)
}

fn graph<M: Trainable>(model: &mut M, batch: &[M::Example]) -> f64 {
    let refs: Vec<&M::Example> = batch.iter().collect();
    model.zero_grad();
    model.accumulate_gradients(&refs).unwrap();
    param_error(model, |m| m.loss(&refs).unwrap())
}

fn inputs(rng: &mut Rng, n: usize, steps: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..steps).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

fn autoencoder(rng: &mut Rng, seed: u64) -> f64 {
    let steps = rng.random_range(3..7);
    let config = AeConfig {
        encoder_widths: [rng.random_range(2..5), rng.random_range(1..4)],
        steps,
        reverse_decoder: rng.random_bool(0.5),
        ..AeConfig::default()
    };
    let mut ae = GruAe::new(config, seed);
    let n = rng.random_range(1..4);
    let batch = inputs(rng, n, steps);
    graph(&mut ae, &batch)
}

fn diagnoser(rng: &mut Rng, seed: u64) -> f64 {
    let steps = rng.random_range(3..7);
    let variant = if seed.is_multiple_of(3) { Variant::Flat } else { Variant::Faults };
    let config = DiagConfig {
        variant,
        trunk_widths: [rng.random_range(2..5), rng.random_range(1..4)],
        attention_dim: rng.random_range(1..4),
        class_hidden: rng.random_range(2..5),
        regression_hidden: rng.random_range(2..5),
        steps,
        loss_weights: LossWeights {
            lambda_1: rng.random_range(0.1..2.0),
            lambda_2: rng.random_range(0.1..2.0),
        },
        ..DiagConfig::default()
    };
    let classes = config.classes();
    let mut model = ABiGru::new(config, seed);
    let n = rng.random_range(2..5);
    let batch: Vec<DiagExample> = inputs(rng, n, steps)
        .into_iter()
        .enumerate()
        .map(|(i, input)| DiagExample {
            input,
            class: rng.random_range(0..classes),
            target: (variant == Variant::Faults || i % 2 == 0).then(|| rng.random_range(0.0..1.0)),
        })
        .collect();
    graph(&mut model, &batch)
}

pub fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst = Worst::default();
    for seed in 0..CONFIGURATIONS {
        let rng = &mut rng_from_seed(0xacce_0000 + seed);
        worst.record("gru", gru(rng, seed));
        worst.record("bigru", bigru(rng));
        worst.record("attention", attention(rng));
        for act in Activation::ALL {
            worst.record(act.name(), dense(rng, act));
        }
        worst.record("heads", heads(rng));
        worst.record("gru-ae", autoencoder(rng, seed));
        worst.record("a-bigru", diagnoser(rng, seed));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.max();
    let kinds: Vec<String> = worst.0.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    Outcome::new(
        max < TOLERANCE && secs <= BUDGET_SECS,
        format!(
            "max relative error {max:.2e} (< 1e-4) over {CONFIGURATIONS} configurations in {secs:.1} s (≤ 120 s) [{}]",
            kinds.join(", ")
        ),
    )
}
