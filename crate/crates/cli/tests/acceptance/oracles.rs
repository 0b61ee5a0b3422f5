//! Threshold calibration, baselines and AUC against brute-force references.

use fiberwatch_core::anomaly::calibrate_scores;
use fiberwatch_core::baselines::{c_factor, if_fit, if_score, LofModel, LRD_EPSILON};
use fiberwatch_core::eval::roc_auc;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SETS: usize = 1000;
const ORACLE_TOLERANCE: f64 = 1e-9;

fn f1_at(scores: &[f64], labels: &[bool], theta: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > theta, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        f64::from(2 * tp) / f64::from(2 * tp + fp + fn_)
    }
}

/// Every distinct flagged set is `{s > t}` for some score `t` or flags all.
fn brute_force_f1(scores: &[f64], labels: &[bool]) -> f64 {
    scores
        .iter()
        .copied()
        .chain([f64::NEG_INFINITY])
        .map(|t| f1_at(scores, labels, t))
        .fold(0.0, f64::max)
}

pub fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xca1);
    let (mut checked, mut mismatches) = (0, 0);
    while checked < SETS {
        let n = rng.random_range(2..25);
        let levels = rng.random_range(1..12);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !labels.contains(&true) || !labels.contains(&false) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..=levels)) * 0.0071).collect();
        let t = calibrate_scores(&scores, &labels, 0).expect("valid score set");
        if t.f1 != brute_force_f1(&scores, &labels) || t.f1 != f1_at(&scores, &labels, t.theta) {
            mismatches += 1;
        }
        checked += 1;
    }
    Outcome::new(mismatches == 0, format!("{mismatches} of {SETS} sets differ from the exhaustive maximum"))
}

/// Builds the same trees with the same draws, routing queries alongside.
#[allow(clippy::too_many_arguments)]
fn replay(data: &[Vec<f64>], members: &[usize], queries: &[usize], q: &[Vec<f64>], depth: usize, limit: usize, rng: &mut ChaCha8Rng, sums: &mut [f64]) {
    let varying: Vec<(usize, f64, f64)> = if depth >= limit || members.len() <= 1 {
        Vec::new()
    } else {
        (0..data[0].len())
            .filter_map(|f| {
                let lo = members.iter().map(|&m| data[m][f]).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|&m| data[m][f]).fold(f64::NEG_INFINITY, f64::max);
                (lo < hi).then_some((f, lo, hi))
            })
            .collect()
    };
    if varying.is_empty() {
        let n = members.len() as f64;
        let c = match members.len() {
            0 | 1 => 0.0,
            2 => 1.0,
            _ => 2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n,
        };
        queries.iter().for_each(|&i| sums[i] += depth as f64 + c);
        return;
    }
    let (f, lo, hi) = varying[rng.random_range(0..varying.len())];
    let t = rng.random_range(lo..hi);
    let (ml, mr): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| data[m][f] < t);
    let (ql, qr): (Vec<usize>, Vec<usize>) = queries.iter().partition(|&&i| q[i][f] < t);
    replay(data, &ml, &ql, q, depth + 1, limit, rng, sums);
    replay(data, &mr, &qr, q, depth + 1, limit, rng, sums);
}

fn brute_if(data: &[Vec<f64>], trees: usize, psi: usize, seed: u64, q: &[Vec<f64>]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut sums = vec![0.0; q.len()];
    let all: Vec<usize> = (0..q.len()).collect();
    for _ in 0..trees {
        let members = index::sample(&mut rng, data.len(), psi).into_vec();
        replay(data, &members, &all, q, 0, limit, &mut rng, &mut sums);
    }
    let c = c_factor(psi);
    sums.iter().map(|s| if c == 0.0 { 1.0 } else { 2f64.powf(-s / trees as f64 / c) }).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// LOF straight from its definition, recomputing every quantity.
fn brute_lof(points: &[Vec<f64>], k: usize, query: &[f64]) -> f64 {
    let others = |p: &[f64], skip: Option<usize>| -> Vec<(usize, f64)> {
        (0..points.len()).filter(|&j| Some(j) != skip).map(|j| (j, dist(p, &points[j]))).collect()
    };
    let k_distance = |p: &[f64], skip: Option<usize>| {
        let mut d: Vec<f64> = others(p, skip).into_iter().map(|x| x.1).collect();
        d.sort_by(f64::total_cmp);
        d[k - 1]
    };
    let hood = |p: &[f64], skip: Option<usize>| -> Vec<usize> {
        let kd = k_distance(p, skip);
        others(p, skip).into_iter().filter(|x| x.1 <= kd).map(|x| x.0).collect()
    };
    let lrd = |p: &[f64], skip: Option<usize>| {
        let n = hood(p, skip);
        let reach: f64 = n.iter().map(|&o| dist(p, &points[o]).max(k_distance(&points[o], Some(o)))).sum();
        1.0 / (reach / n.len() as f64 + LRD_EPSILON)
    };
    let n = hood(query, None);
    let lq = lrd(query, None);
    n.iter().map(|&o| lrd(&points[o], Some(o)) / lq).sum::<f64>() / n.len() as f64
}

fn rank_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n as f64 - pos;
    let r: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (r - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

fn points(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    // Coarse grid values so that ties and duplicates occur.
    (0..n)
        .map(|_| (0..dims).map(|_| f64::from(rng.random_range(-6..=6)) * 0.5 + if rng.random_bool(0.5) { rng.random_range(-0.2..0.2) } else { 0.0 }).collect())
        .collect()
}

pub fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a11);
    let (mut if_dev, mut lof_dev, mut auc_dev) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..300u64 {
        let n = rng.random_range(2..=10);
        let dims = rng.random_range(1..4);
        let data = points(&mut rng, n, dims);
        let queries: Vec<Vec<f64>> = data.iter().cloned().chain(points(&mut rng, 3, dims)).collect();
        let psi = rng.random_range(1..=n);
        let trees = rng.random_range(1..30);
        let forest = if_fit(&data, trees, psi, case).unwrap();
        for (q, o) in queries.iter().zip(brute_if(&data, trees, psi, case, &queries)) {
            if_dev = if_dev.max((if_score(&forest, q) - o).abs());
        }
        let k = rng.random_range(1..n.max(2));
        if k < n {
            let lof = LofModel::fit(data.clone(), k).unwrap();
            for q in &queries {
                let (s, o) = (lof.score(q), brute_lof(&data, k, q));
                lof_dev = lof_dev.max((s - o).abs() / o.abs().max(1.0));
            }
        }
    }
    let mut auc_sets = 0;
    while auc_sets < SETS {
        let n = rng.random_range(2..60);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if !labels.contains(&true) || !labels.contains(&false) {
            continue;
        }
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { f64::from(rng.random_range(0..6)) } else { rng.random_range(-5.0..5.0) }).collect();
        auc_dev = auc_dev.max((roc_auc(&scores, &labels).unwrap().area - rank_auc(&scores, &labels)).abs());
        auc_sets += 1;
    }
    let pass = if_dev <= ORACLE_TOLERANCE && lof_dev <= ORACLE_TOLERANCE && auc_dev <= ORACLE_TOLERANCE;
    Outcome::new(
        pass,
        format!("max |Δ| IF {if_dev:.1e}, LOF {lof_dev:.1e} relative (300 datasets of ≤ 10 points), AUC {auc_dev:.1e} ({SETS} sets); tolerance 1e-9"),
    )
}
