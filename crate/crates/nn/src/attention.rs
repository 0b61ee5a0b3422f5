//! Additive attention pooling over per-step features.
//!
//! ```text
//! e_i = tanh(h_i W_h)          per-step score vector
//! s_i = e_i · w                scalar score (w shared across steps)
//! α   = softmax_i(s_i)
//! c   = Σ_i α_i h_i
//! ```

use rand_chacha::ChaCha8Rng;

use crate::activation::softmax_into;
use crate::error::{NnError, Result};
use crate::module::{xavier_uniform, Module};
use crate::tensor::{gemm, Matrix, Param, SeqBatch, View};

/// Attention result for a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `T × attn_dim` matrix of `e_i`.
    pub scores: Matrix,
    /// `α_i`, one per step.
    pub weights: Vec<f64>,
    /// Context vector `c`, of the feature dimension.
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    feature_dim: usize,
    attn_dim: usize,
    /// `feature_dim × attn_dim`
    pub w_h: Param,
    /// `attn_dim`
    pub w: Param,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    h: SeqBatch,
    e: SeqBatch,
    /// `alpha[t * batch + b]`
    alpha: Vec<f64>,
}

impl AttentionCache {
    /// Attention weights for example `b`, one per step.
    pub fn weights(&self, b: usize) -> Vec<f64> {
        let batch = self.h.batch;
        (0..self.h.steps).map(|t| self.alpha[t * batch + b]).collect()
    }
}

impl Attention {
    pub fn new(feature_dim: usize, attn_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_h = xavier_uniform(rng, &[feature_dim, attn_dim], feature_dim, attn_dim);
        let w = xavier_uniform(rng, &[attn_dim], attn_dim, 1);
        Self {
            feature_dim,
            attn_dim,
            w_h: Param::from_tensor(w_h),
            w: Param::from_tensor(w),
        }
    }

    pub fn zeros(feature_dim: usize, attn_dim: usize) -> Self {
        Self {
            feature_dim,
            attn_dim,
            w_h: Param::zeros(&[feature_dim, attn_dim]),
            w: Param::zeros(&[attn_dim]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn attn_dim(&self) -> usize {
        self.attn_dim
    }

    /// Returns the `batch × feature_dim` context matrix.
    pub fn forward(&self, h: &SeqBatch) -> Result<(Matrix, AttentionCache)> {
        if h.steps == 0 {
            return Err(NnError::EmptySequence);
        }
        if h.dim != self.feature_dim {
            return Err(NnError::ShapeMismatch {
                what: "attention features".into(),
                expected: self.feature_dim,
                found: h.dim,
            });
        }
        let (steps, batch, fd, ad) = (h.steps, h.batch, self.feature_dim, self.attn_dim);
        let mut e = SeqBatch::zeros(steps, batch, ad);
        gemm(
            steps * batch,
            fd,
            ad,
            1.0,
            View::rm(&h.data, fd),
            View::rm(self.w_h.value.data(), ad),
            0.0,
            &mut e.data,
            ad,
        );
        e.data.iter_mut().for_each(|v| *v = v.tanh());

        let w = self.w.value.data();
        let mut alpha = vec![0.0; steps * batch];
        let mut s = vec![0.0; steps];
        let mut a = vec![0.0; steps];
        let mut context = Matrix::zeros(batch, fd);
        for b in 0..batch {
            for (t, st) in s.iter_mut().enumerate() {
                *st = e.at(t, b).iter().zip(w).map(|(x, y)| x * y).sum();
            }
            softmax_into(&s, &mut a);
            let c = context.row_mut(b);
            for t in 0..steps {
                alpha[t * batch + b] = a[t];
                for (cv, hv) in c.iter_mut().zip(h.at(t, b)) {
                    *cv += a[t] * hv;
                }
            }
        }
        Ok((
            context,
            AttentionCache {
                h: h.clone(),
                e,
                alpha,
            },
        ))
    }

    /// Accumulates gradients and returns `dL/dh` given `dL/dc`.
    pub fn backward(&mut self, cache: &AttentionCache, d_context: &Matrix) -> Result<SeqBatch> {
        let h = &cache.h;
        let (steps, batch, fd, ad) = (h.steps, h.batch, self.feature_dim, self.attn_dim);
        if d_context.rows != batch || d_context.cols != fd {
            return Err(NnError::ShapeMismatch {
                what: "attention context gradient".into(),
                expected: batch * fd,
                found: d_context.data.len(),
            });
        }
        let w = self.w.value.data().to_vec();
        let mut dh = SeqBatch::zeros(steps, batch, fd);
        // Gradient w.r.t. the pre-tanh scores, laid out like `e`.
        let mut d_pre = SeqBatch::zeros(steps, batch, ad);
        let mut d_alpha = vec![0.0; steps];
        let dw = self.w.grad.data_mut();

        for b in 0..batch {
            let dc = d_context.row(b);
            let mut weighted = 0.0;
            for t in 0..steps {
                let a = cache.alpha[t * batch + b];
                d_alpha[t] = dc.iter().zip(h.at(t, b)).map(|(x, y)| x * y).sum();
                weighted += a * d_alpha[t];
                for (g, c) in dh.at_mut(t, b).iter_mut().zip(dc) {
                    *g += a * c;
                }
            }
            for t in 0..steps {
                let a = cache.alpha[t * batch + b];
                let ds = a * (d_alpha[t] - weighted);
                let e = cache.e.at(t, b);
                for ((dp, ev), wv) in d_pre.at_mut(t, b).iter_mut().zip(e).zip(&w) {
                    *dp = ds * wv * (1.0 - ev * ev);
                }
                for (g, ev) in dw.iter_mut().zip(e) {
                    *g += ds * ev;
                }
            }
        }

        let rows = steps * batch;
        gemm(
            fd,
            rows,
            ad,
            1.0,
            View::tr(&h.data, fd),
            View::rm(&d_pre.data, ad),
            1.0,
            self.w_h.grad.data_mut(),
            ad,
        );
        gemm(
            rows,
            ad,
            fd,
            1.0,
            View::rm(&d_pre.data, ad),
            View::tr(self.w_h.value.data(), ad),
            1.0,
            &mut dh.data,
            fd,
        );
        Ok(dh)
    }
}

impl Module for Attention {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("w_h".into(), &self.w_h), ("w".into(), &self.w)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("w_h".into(), &mut self.w_h), ("w".into(), &mut self.w)]
    }
}

/// Attention over one `T × feature_dim` sequence with explicit weights
/// (`w_h` is `feature_dim × attn_dim`, `w` has `attn_dim` entries).
pub fn attention(h: &Matrix, w_h: &Matrix, w: &[f64]) -> Result<AttentionOutput> {
    if w_h.rows != h.cols {
        return Err(NnError::ShapeMismatch {
            what: "attention W_h rows".into(),
            expected: h.cols,
            found: w_h.rows,
        });
    }
    if w.len() != w_h.cols {
        return Err(NnError::ShapeMismatch {
            what: "attention vector".into(),
            expected: w_h.cols,
            found: w.len(),
        });
    }
    let mut layer = Attention::zeros(h.cols, w_h.cols);
    layer.w_h.value.data_mut().copy_from_slice(&w_h.data);
    layer.w.value.data_mut().copy_from_slice(w);
    let (context, cache) = layer.forward(&SeqBatch::from_matrix(h))?;
    Ok(AttentionOutput {
        scores: cache.e.example(0),
        weights: cache.weights(0),
        context: context.data,
    })
}
