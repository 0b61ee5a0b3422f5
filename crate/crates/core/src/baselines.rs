//! Isolation forest and local outlier factor baselines.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::{best_f1_threshold, pr_auprc};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
pub const DEFAULT_LOF_K: usize = 20;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Added to mean reachability distances so duplicate points keep a finite
/// density.
pub const LRD_EPSILON: f64 = 1e-10;

/// Average path length of an unsuccessful BST search over `n` points.
pub fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn path_length(&self, x: &[f64], depth: usize) -> f64 {
        match self {
            Node::Leaf { size } => depth as f64 + c_factor(*size),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let next = if x[*feature] < *threshold { left } else { right };
                next.path_length(x, depth + 1)
            }
        }
    }
}

fn build(data: &[Vec<f64>], idx: &[usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Node {
    if depth >= limit || idx.len() <= 1 {
        return Node::Leaf { size: idx.len() };
    }
    let dims = data[idx[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|q| {
            let lo = idx.iter().map(|&i| data[i][q]).fold(f64::INFINITY, f64::min);
            let hi = idx.iter().map(|&i| data[i][q]).fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((q, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::Leaf { size: idx.len() };
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let threshold = rng.random_range(lo..hi);
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data[i][feature] < threshold);
    let left = build(data, &l, depth + 1, limit, rng);
    let right = build(data, &r, depth + 1, limit, rng);
    Node::Split {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<Node>,
    pub subsample_size: usize,
    pub tree_count: usize,
    pub seed: u64,
}

impl IsolationForest {
    pub fn depth_limit(&self) -> usize {
        depth_limit(self.subsample_size)
    }
}

fn depth_limit(subsample: usize) -> usize {
    (subsample.max(1) as f64).log2().ceil() as usize
}

fn check_points(data: &[Vec<f64>]) -> Result<usize> {
    let dims = data
        .first()
        .map(Vec::len)
        .ok_or_else(|| CoreError::InvalidInput("baseline needs at least one point".into()))?;
    if data.iter().any(|p| p.len() != dims || p.iter().any(|v| !v.is_finite())) {
        return Err(CoreError::InvalidInput("points must share one dimension and be finite".into()));
    }
    Ok(dims)
}

/// Fits `tree_count` trees, each on a subsample drawn without replacement
/// and grown to depth ⌈log2 ψ⌉.
pub fn if_fit(data: &[Vec<f64>], tree_count: usize, subsample_size: usize, seed: u64) -> Result<IsolationForest> {
    check_points(data)?;
    if subsample_size == 0 || subsample_size > data.len() {
        return Err(CoreError::InvalidInput(format!(
            "subsample size {subsample_size} must lie in [1, {}]",
            data.len()
        )));
    }
    if tree_count == 0 {
        return Err(CoreError::InvalidInput("tree_count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = depth_limit(subsample_size);
    let trees = (0..tree_count)
        .map(|_| {
            let idx = index::sample(&mut rng, data.len(), subsample_size).into_vec();
            build(data, &idx, 0, limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample_size,
        tree_count,
        seed,
    })
}

/// Default forest: 100 trees, subsample 256 or the whole set if smaller.
pub fn if_fit_default(data: &[Vec<f64>], seed: u64) -> Result<IsolationForest> {
    if_fit(data, DEFAULT_TREES, DEFAULT_SUBSAMPLE.min(data.len()), seed)
}

/// `2^(−E[h(x)] / c(ψ))`; a one-point forest scores everything 1.
pub fn if_score(forest: &IsolationForest, point: &[f64]) -> f64 {
    let c = c_factor(forest.subsample_size);
    if c == 0.0 {
        return 1.0;
    }
    let mean = forest.trees.iter().map(|t| t.path_length(point, 0)).sum::<f64>() / forest.trees.len() as f64;
    2f64.powf(-mean / c)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub points: Vec<Vec<f64>>,
    pub k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

/// k nearest neighbors of `d` (distances to all candidates), extended with
/// every candidate tied at the k-distance. Returns (k-distance, members).
fn neighborhood(d: &[(usize, f64)], k: usize) -> (f64, Vec<(usize, f64)>) {
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let mut d = d.to_vec();
    d.select_nth_unstable_by(k - 1, by_distance);
    let kd = d[k - 1].1;
    let mut members: Vec<(usize, f64)> = d.into_iter().filter(|&(_, dist)| dist <= kd).collect();
    members.sort_by(by_distance);
    (kd, members)
}

fn lrd_of(members: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let mean = members.iter().map(|&(o, d)| d.max(k_distance[o])).sum::<f64>() / members.len() as f64;
    1.0 / (mean + LRD_EPSILON)
}

impl LofModel {
    pub fn fit(points: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        check_points(&points)?;
        if k == 0 || k >= points.len() {
            return Err(CoreError::InvalidInput(format!(
                "k = {k} must lie in [1, {})",
                points.len()
            )));
        }
        let n = points.len();
        let hoods: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
            .map(|i| {
                let d: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, distance(&points[i], &points[j])))
                    .collect();
                neighborhood(&d, k)
            })
            .collect();
        let k_distance: Vec<f64> = hoods.iter().map(|h| h.0).collect();
        let lrd = hoods.iter().map(|(_, m)| lrd_of(m, &k_distance)).collect();
        Ok(Self {
            points,
            k,
            k_distance,
            lrd,
        })
    }

    /// LOF of a query against the reference set (the query is not part of it).
    pub fn score(&self, query: &[f64]) -> f64 {
        let d: Vec<(usize, f64)> = self.points.iter().enumerate().map(|(j, p)| (j, distance(query, p))).collect();
        let (_, members) = neighborhood(&d, self.k);
        let lrd_q = lrd_of(&members, &self.k_distance);
        members.iter().map(|&(o, _)| self.lrd[o] / lrd_q).sum::<f64>() / members.len() as f64
    }
}

pub fn lof_score(model: &LofModel, point: &[f64]) -> f64 {
    model.score(point)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEval {
    pub threshold: f64,
    pub f1: f64,
    pub auprc: f64,
}

/// Best-F1 threshold and AUPRC, the same sweep used for the autoencoder.
pub fn baseline_evaluate(scores: &[f64], labels: &[bool]) -> Result<BaselineEval> {
    let best = best_f1_threshold(scores, labels)?;
    Ok(BaselineEval {
        threshold: best.threshold,
        f1: best.f1,
        auprc: pr_auprc(scores, labels)?.area,
    })
}
