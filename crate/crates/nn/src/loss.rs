use serde::{Deserialize, Serialize};

use crate::activation::softmax_into;
use crate::error::{NnError, Result};
use crate::tensor::Matrix;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean squared error over all elements.
pub fn mse_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_len("mse", x.len(), x_hat.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `x_hat`.
pub fn mse_grad(x: &[f64], x_hat: &[f64]) -> Result<Vec<f64>> {
    check_len("mse", x.len(), x_hat.len())?;
    let n = x.len().max(1) as f64;
    Ok(x.iter().zip(x_hat).map(|(a, b)| 2.0 * (b - a) / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    /// Mean over rows of `-ln p_true`.
    pub value: f64,
    /// Rows whose true-class probability was clamped to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Cross-entropy between row-wise probabilities and one-hot targets.
pub fn cross_entropy_loss(probs: &Matrix, one_hot: &Matrix) -> Result<CrossEntropy> {
    check_len("cross-entropy", probs.data.len(), one_hot.data.len())?;
    let mut total = 0.0;
    let mut clamped = 0;
    for r in 0..probs.rows {
        let p: f64 = probs.row(r).iter().zip(one_hot.row(r)).map(|(p, y)| p * y).sum();
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(CrossEntropy {
        value: total / probs.rows.max(1) as f64,
        clamped,
    })
}

/// Softmax followed by cross-entropy, computed from logits with a
/// log-sum-exp shift. Returns the mean loss, the softmax probabilities and
/// the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix, Matrix)> {
    check_len("targets", logits.rows, targets.len())?;
    let n = logits.rows.max(1) as f64;
    let mut probs = Matrix::zeros(logits.rows, logits.cols);
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        if y >= logits.cols {
            return Err(NnError::ShapeMismatch {
                what: "class index".into(),
                expected: logits.cols,
                found: y,
            });
        }
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
        softmax_into(z, probs.row_mut(r));
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let indicator = if c == y { 1.0 } else { 0.0 };
            *g = (probs.get(r, c) - indicator) / n;
        }
    }
    Ok((total / n, probs, grad))
}

/// Weights of a two-task objective `λ1·L1 + λ2·L2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl LossWeights {
    pub fn new(lambda_1: f64, lambda_2: f64) -> Result<Self> {
        let w = Self { lambda_1, lambda_2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_1) || !ok(self.lambda_2) || (self.lambda_1 == 0.0 && self.lambda_2 == 0.0) {
            return Err(NnError::Format(format!(
                "loss weights must be non-negative and not both zero, got ({}, {})",
                self.lambda_1, self.lambda_2
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_1: 1.0,
            lambda_2: 1.0,
        }
    }
}

pub fn multitask_loss(l1: f64, l2: f64, weights: LossWeights) -> f64 {
    weights.lambda_1 * l1 + weights.lambda_2 * l2
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(NnError::ShapeMismatch {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}
