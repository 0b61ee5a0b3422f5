use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::error::{NnError, Result};
use crate::module::{xavier_uniform, Module};
use crate::tensor::{accumulate_col_sums, add_row_bias, gemm, Matrix, Param, View};

/// Fully connected layer `y = act(x W + b)` applied row-wise to a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    /// `input_dim × output_dim`
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Matrix,
    pre: Matrix,
    out: Matrix,
}

impl Dense {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
            w: Param::from_tensor(xavier_uniform(rng, &[input_dim, output_dim], input_dim, output_dim)),
            b: Param::zeros(&[output_dim]),
        }
    }

    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
            w: Param::zeros(&[input_dim, output_dim]),
            b: Param::zeros(&[output_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseCache)> {
        if x.cols != self.input_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense input".into(),
                expected: self.input_dim,
                found: x.cols,
            });
        }
        let mut pre = Matrix::zeros(x.rows, self.output_dim);
        gemm(
            x.rows,
            self.input_dim,
            self.output_dim,
            1.0,
            View::rm(&x.data, self.input_dim),
            View::rm(self.w.value.data(), self.output_dim),
            0.0,
            &mut pre.data,
            self.output_dim,
        );
        add_row_bias(&mut pre.data, self.b.value.data());
        let mut out = Matrix::zeros(x.rows, self.output_dim);
        self.activation.forward(&pre.data, &mut out.data, self.output_dim);
        Ok((
            out.clone(),
            DenseCache {
                x: x.clone(),
                pre,
                out,
            },
        ))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&mut self, cache: &DenseCache, d_out: &Matrix) -> Result<Matrix> {
        if d_out.rows != cache.out.rows || d_out.cols != self.output_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense output gradient".into(),
                expected: cache.out.data.len(),
                found: d_out.data.len(),
            });
        }
        let rows = d_out.rows;
        let mut d_pre = Matrix::zeros(rows, self.output_dim);
        self.activation
            .backward(&cache.pre.data, &cache.out.data, &d_out.data, &mut d_pre.data, self.output_dim);
        gemm(
            self.input_dim,
            rows,
            self.output_dim,
            1.0,
            View::tr(&cache.x.data, self.input_dim),
            View::rm(&d_pre.data, self.output_dim),
            1.0,
            self.w.grad.data_mut(),
            self.output_dim,
        );
        accumulate_col_sums(&d_pre.data, self.output_dim, self.b.grad.data_mut());
        let mut dx = Matrix::zeros(rows, self.input_dim);
        gemm(
            rows,
            self.output_dim,
            self.input_dim,
            1.0,
            View::rm(&d_pre.data, self.output_dim),
            View::tr(self.w.value.data(), self.output_dim),
            0.0,
            &mut dx.data,
            self.input_dim,
        );
        Ok(dx)
    }
}

impl Module for Dense {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

/// `activation(x W + b)` for one input vector; `w` is `len(x) × len(b)`.
pub fn dense_forward(w: &Matrix, b: &[f64], x: &[f64], activation: Activation) -> Result<Vec<f64>> {
    if w.rows != x.len() {
        return Err(NnError::ShapeMismatch {
            what: "dense weight rows".into(),
            expected: x.len(),
            found: w.rows,
        });
    }
    if w.cols != b.len() {
        return Err(NnError::ShapeMismatch {
            what: "dense bias".into(),
            expected: w.cols,
            found: b.len(),
        });
    }
    let mut layer = Dense::zeros(w.rows, w.cols, activation);
    layer.w.value.data_mut().copy_from_slice(&w.data);
    layer.b.value.data_mut().copy_from_slice(b);
    Ok(layer.infer(&Matrix::from_vec(1, x.len(), x.to_vec())?)?.data)
}
