//! Dense storage types and the GEMM kernel everything else is built on.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// An n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::ShapeMismatch {
                what: "tensor data".into(),
                expected: len,
                found: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
        }
    }

    pub fn from_tensor(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Row-major 2-D matrix. Batches are stored one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(NnError::ShapeMismatch {
                what: "matrix data".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NnError::ShapeMismatch {
                    what: "matrix row".into(),
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// A batch of sequences laid out time-major: `data[(t * batch + b) * dim + d]`.
///
/// Time-major layout lets one GEMM cover every step at once when the
/// computation is not recurrent.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: usize,
    pub batch: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SeqBatch {
    pub fn zeros(steps: usize, batch: usize, dim: usize) -> Self {
        Self {
            steps,
            batch,
            dim,
            data: vec![0.0; steps * batch * dim],
        }
    }

    /// Builds a batch from per-example sequences, each `steps × dim` row-major.
    pub fn from_examples(examples: &[&[f64]], steps: usize, dim: usize) -> Result<Self> {
        let batch = examples.len();
        let mut out = Self::zeros(steps, batch, dim);
        for (b, ex) in examples.iter().enumerate() {
            if ex.len() != steps * dim {
                return Err(NnError::ShapeMismatch {
                    what: "sequence example".into(),
                    expected: steps * dim,
                    found: ex.len(),
                });
            }
            for t in 0..steps {
                out.at_mut(t, b)
                    .copy_from_slice(&ex[t * dim..(t + 1) * dim]);
            }
        }
        Ok(out)
    }

    /// Single sequence given as a `steps × dim` matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            steps: m.rows,
            batch: 1,
            dim: m.cols,
            data: m.data.clone(),
        }
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let w = self.batch * self.dim;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.batch * self.dim;
        &mut self.data[t * w..(t + 1) * w]
    }

    pub fn at(&self, t: usize, b: usize) -> &[f64] {
        let start = (t * self.batch + b) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn at_mut(&mut self, t: usize, b: usize) -> &mut [f64] {
        let start = (t * self.batch + b) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// The sequence with its time axis flipped.
    pub fn reversed(&self) -> Self {
        let mut out = Self::zeros(self.steps, self.batch, self.dim);
        for t in 0..self.steps {
            out.step_mut(self.steps - 1 - t).copy_from_slice(self.step(t));
        }
        out
    }

    /// One example as a `steps × dim` matrix.
    pub fn example(&self, b: usize) -> Matrix {
        let mut m = Matrix::zeros(self.steps, self.dim);
        for t in 0..self.steps {
            m.row_mut(t).copy_from_slice(self.at(t, b));
        }
        m
    }

    pub fn add_assign(&mut self, other: &SeqBatch) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Operand view for [`gemm`]: a logical `rows × cols` matrix over a slice with
/// arbitrary strides.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    /// Row-major matrix whose rows are `ld` apart.
    pub fn rm(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            row_stride: ld,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix whose rows are `ld` apart.
    pub fn tr(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: ld,
        }
    }
}

/// `C[m×n] = alpha·A[m×k]·B[k×n] + beta·C`, with C row-major and rows `ldc` apart.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n, "gemm: C too small");
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    let last = |v: &View<'_>, rows: usize, cols: usize| (rows - 1) * v.row_stride + (cols - 1) * v.col_stride;
    assert!(last(&a, m, k) < a.data.len(), "gemm: A out of bounds");
    assert!(last(&b, k, n) < b.data.len(), "gemm: B out of bounds");
    // SAFETY: every element touched lies within the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Adds `bias` to every row of a row-major matrix with `cols` columns.
pub(crate) fn add_row_bias(data: &mut [f64], bias: &[f64]) {
    for row in data.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates the column sums of a row-major matrix into `out`.
pub(crate) fn accumulate_col_sums(data: &[f64], cols: usize, out: &mut [f64]) {
    for row in data.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expected = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, View::rm(&a, k), View::rm(&b, n), 0.0, &mut c, n);
        for (x, y) in c.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        // Same product with A supplied as its transpose.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, View::tr(&at, m), View::rm(&b, n), 0.0, &mut c2, n);
        assert_eq!(c, c2);
    }

    #[test]
    fn reversed_twice_is_identity() {
        let s = SeqBatch {
            steps: 3,
            batch: 2,
            dim: 2,
            data: (0..12).map(f64::from).collect(),
        };
        assert_eq!(s.reversed().reversed(), s);
        assert_eq!(s.reversed().at(0, 1), s.at(2, 1));
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).len(), 6);
    }
}
