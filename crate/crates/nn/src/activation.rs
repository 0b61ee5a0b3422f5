use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::NnError;

pub const ELU_ALPHA: f64 = 1.0;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    LeakyRelu,
    Selu,
    Sigmoid,
    Tanh,
    Softmax,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 8] = [
        Activation::Elu,
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Selu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Softmax,
        Activation::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Selu => "selu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    /// Applies the activation to `pre`, one row of `width` values at a time.
    /// Only softmax actually couples values within a row.
    pub fn forward(self, pre: &[f64], out: &mut [f64], width: usize) {
        debug_assert_eq!(pre.len(), out.len());
        match self {
            Activation::Softmax => {
                for (p, o) in pre.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
                    softmax_into(p, o);
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(pre) {
                    *o = self.scalar(x);
                }
            }
        }
    }

    /// Pulls `d_out` back through the activation into `d_pre` (overwritten).
    pub fn backward(self, pre: &[f64], out: &[f64], d_out: &[f64], d_pre: &mut [f64], width: usize) {
        match self {
            Activation::Softmax => {
                for ((y, dy), dz) in out
                    .chunks_exact(width)
                    .zip(d_out.chunks_exact(width))
                    .zip(d_pre.chunks_exact_mut(width))
                {
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for ((dz, &y), &dy) in dz.iter_mut().zip(y).zip(dy) {
                        *dz = y * (dy - dot);
                    }
                }
            }
            _ => {
                for (((dz, &x), &y), &dy) in d_pre.iter_mut().zip(pre).zip(out).zip(d_out) {
                    *dz = dy * self.scalar_derivative(x, y);
                }
            }
        }
    }

    fn scalar(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Softmax => unreachable!("softmax is row-wise"),
        }
    }

    fn scalar_derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Softmax => unreachable!("softmax is row-wise"),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::UnknownActivation(s.to_string()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}
