//! Gated recurrent unit cells and layers with full backpropagation through time.
//!
//! Gate equations, with `x_t` a row vector:
//!
//! ```text
//! z_t = σ(x_t W_z + h_{t-1} U_z + b_z)
//! r_t = σ(x_t W_r + h_{t-1} U_r + b_r)
//! h̃_t = tanh(x_t W_h + (r_t ∘ h_{t-1}) U_h + b_h)
//! h_t = z_t ∘ h_{t-1} + (1 - z_t) ∘ h̃_t      (MergeConvention::KeepPrevious)
//! ```
//!
//! Each gate has its own input matrix `W` and recurrent matrix `U`. Inside a
//! [`GruLayer`] they are stored fused as `W = [W_z | W_r | W_h]` (input × 3·hidden),
//! `U = [U_z | U_r | U_h]` and `b = [b_z | b_r | b_h]`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::sigmoid;
use crate::error::{NnError, Result};
use crate::module::{xavier_uniform, Module};
use crate::tensor::{accumulate_col_sums, add_row_bias, gemm, Matrix, Param, SeqBatch, Tensor, View};

/// How the update gate blends the previous state with the candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeConvention {
    /// `h = z ∘ h_prev + (1 - z) ∘ h̃`: a saturated update gate keeps the old state.
    #[default]
    KeepPrevious,
    /// `h = (1 - z) ∘ h_prev + z ∘ h̃`: a saturated update gate takes the candidate.
    TakeCandidate,
}

impl MergeConvention {
    #[inline]
    fn merge(self, z: f64, h_prev: f64, cand: f64) -> f64 {
        match self {
            MergeConvention::KeepPrevious => z * h_prev + (1.0 - z) * cand,
            MergeConvention::TakeCandidate => (1.0 - z) * h_prev + z * cand,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-gate weights of one GRU cell. Matrices are `input_dim × hidden_dim`
/// (`w_*`) and `hidden_dim × hidden_dim` (`u_*`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Matrix::zeros(input_dim, hidden_dim);
        let u = || Matrix::zeros(hidden_dim, hidden_dim);
        Self {
            w_z: w(),
            u_z: u(),
            b_z: vec![0.0; hidden_dim],
            w_r: w(),
            u_r: u(),
            b_r: vec![0.0; hidden_dim],
            w_h: w(),
            u_h: u(),
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.cols
    }

    fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        let checks = [
            ("w_r", self.w_r.rows * self.w_r.cols, i * h),
            ("w_h", self.w_h.rows * self.w_h.cols, i * h),
            ("u_z", self.u_z.rows * self.u_z.cols, h * h),
            ("u_r", self.u_r.rows * self.u_r.cols, h * h),
            ("u_h", self.u_h.rows * self.u_h.cols, h * h),
            ("b_z", self.b_z.len(), h),
            ("b_r", self.b_r.len(), h),
            ("b_h", self.b_h.len(), h),
        ];
        for (what, found, expected) in checks {
            if found != expected {
                return Err(NnError::ShapeMismatch {
                    what: what.into(),
                    expected,
                    found,
                });
            }
        }
        let square = [(&self.u_z, "u_z"), (&self.u_r, "u_r"), (&self.u_h, "u_h")];
        for (m, what) in square {
            if m.rows != h {
                return Err(NnError::ShapeMismatch {
                    what: what.into(),
                    expected: h,
                    found: m.rows,
                });
            }
        }
        Ok(())
    }
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStepState {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

fn row_times(x: &[f64], m: &Matrix, out: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(m.row(i)) {
            *o += xi * w;
        }
    }
}

/// One step of a single GRU cell.
pub fn gru_cell_step(
    params: &GruCellParams,
    x_t: &[f64],
    h_prev: &[f64],
    convention: MergeConvention,
) -> Result<GruStepState> {
    params.validate()?;
    let (input_dim, hidden) = (params.input_dim(), params.hidden_dim());
    if x_t.len() != input_dim {
        return Err(NnError::ShapeMismatch {
            what: "gru input".into(),
            expected: input_dim,
            found: x_t.len(),
        });
    }
    if h_prev.len() != hidden {
        return Err(NnError::ShapeMismatch {
            what: "gru previous state".into(),
            expected: hidden,
            found: h_prev.len(),
        });
    }

    let mut az = params.b_z.clone();
    row_times(x_t, &params.w_z, &mut az);
    row_times(h_prev, &params.u_z, &mut az);
    let z: Vec<f64> = az.into_iter().map(sigmoid).collect();

    let mut ar = params.b_r.clone();
    row_times(x_t, &params.w_r, &mut ar);
    row_times(h_prev, &params.u_r, &mut ar);
    let r: Vec<f64> = ar.into_iter().map(sigmoid).collect();

    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut ah = params.b_h.clone();
    row_times(x_t, &params.w_h, &mut ah);
    row_times(&gated, &params.u_h, &mut ah);
    let h_tilde: Vec<f64> = ah.into_iter().map(f64::tanh).collect();

    let h = (0..hidden)
        .map(|j| convention.merge(z[j], h_prev[j], h_tilde[j]))
        .collect();
    Ok(GruStepState { z, r, h_tilde, h })
}

/// Runs a GRU over one `T × input_dim` sequence from `h_0 = 0`, returning the
/// `T × hidden_dim` states. In the backward direction the sequence is consumed
/// last-to-first and the outputs are re-reversed so row `t` lines up with
/// input row `t`.
pub fn gru_layer_forward(
    params: &GruCellParams,
    inputs: &Matrix,
    direction: Direction,
    convention: MergeConvention,
) -> Result<Matrix> {
    let layer = GruLayer::from_cell_params(params, convention)?;
    let out = layer.infer(&SeqBatch::from_matrix(inputs), direction)?;
    Ok(out.example(0))
}

/// A batched GRU layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    input_dim: usize,
    hidden_dim: usize,
    convention: MergeConvention,
    pub w: Param,
    pub u: Param,
    pub b: Param,
}

/// Values cached by [`GruLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    direction: Direction,
    /// Input in processing order.
    x: SeqBatch,
    /// `[z | r | h̃]` per step, processing order.
    gates: SeqBatch,
    /// `r ∘ h_prev` per step.
    gated: SeqBatch,
    /// Hidden states, processing order.
    h: SeqBatch,
}

impl GruLayer {
    pub fn new(input_dim: usize, hidden_dim: usize, convention: MergeConvention, rng: &mut ChaCha8Rng) -> Self {
        let h3 = 3 * hidden_dim;
        let mut w = Tensor::zeros(&[input_dim, h3]);
        let mut u = Tensor::zeros(&[hidden_dim, h3]);
        // Each gate block gets its own fan-in/fan-out bound.
        for gate in 0..3 {
            let wb = xavier_uniform(rng, &[input_dim, hidden_dim], input_dim, hidden_dim);
            let ub = xavier_uniform(rng, &[hidden_dim, hidden_dim], hidden_dim, hidden_dim);
            for i in 0..input_dim {
                w.data_mut()[i * h3 + gate * hidden_dim..i * h3 + (gate + 1) * hidden_dim]
                    .copy_from_slice(&wb.data()[i * hidden_dim..(i + 1) * hidden_dim]);
            }
            for i in 0..hidden_dim {
                u.data_mut()[i * h3 + gate * hidden_dim..i * h3 + (gate + 1) * hidden_dim]
                    .copy_from_slice(&ub.data()[i * hidden_dim..(i + 1) * hidden_dim]);
            }
        }
        Self {
            input_dim,
            hidden_dim,
            convention,
            w: Param::from_tensor(w),
            u: Param::from_tensor(u),
            b: Param::zeros(&[h3]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, convention: MergeConvention) -> Self {
        Self {
            input_dim,
            hidden_dim,
            convention,
            w: Param::zeros(&[input_dim, 3 * hidden_dim]),
            u: Param::zeros(&[hidden_dim, 3 * hidden_dim]),
            b: Param::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn from_cell_params(p: &GruCellParams, convention: MergeConvention) -> Result<Self> {
        p.validate()?;
        let (i_dim, h) = (p.input_dim(), p.hidden_dim());
        let mut layer = Self::zeros(i_dim, h, convention);
        let h3 = 3 * h;
        for (gate, (wm, um, bv)) in [(&p.w_z, &p.u_z, &p.b_z), (&p.w_r, &p.u_r, &p.b_r), (&p.w_h, &p.u_h, &p.b_h)]
            .into_iter()
            .enumerate()
        {
            for i in 0..i_dim {
                layer.w.value.data_mut()[i * h3 + gate * h..i * h3 + (gate + 1) * h].copy_from_slice(wm.row(i));
            }
            for i in 0..h {
                layer.u.value.data_mut()[i * h3 + gate * h..i * h3 + (gate + 1) * h].copy_from_slice(um.row(i));
            }
            layer.b.value.data_mut()[gate * h..(gate + 1) * h].copy_from_slice(bv);
        }
        Ok(layer)
    }

    pub fn cell_params(&self) -> GruCellParams {
        let (i_dim, h) = (self.input_dim, self.hidden_dim);
        let h3 = 3 * h;
        let block = |src: &Tensor, rows: usize, gate: usize| {
            let mut m = Matrix::zeros(rows, h);
            for i in 0..rows {
                m.row_mut(i)
                    .copy_from_slice(&src.data()[i * h3 + gate * h..i * h3 + (gate + 1) * h]);
            }
            m
        };
        let bias = |gate: usize| self.b.value.data()[gate * h..(gate + 1) * h].to_vec();
        GruCellParams {
            w_z: block(&self.w.value, i_dim, 0),
            u_z: block(&self.u.value, h, 0),
            b_z: bias(0),
            w_r: block(&self.w.value, i_dim, 1),
            u_r: block(&self.u.value, h, 1),
            b_r: bias(1),
            w_h: block(&self.w.value, i_dim, 2),
            u_h: block(&self.u.value, h, 2),
            b_h: bias(2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn convention(&self) -> MergeConvention {
        self.convention
    }

    pub fn set_convention(&mut self, convention: MergeConvention) {
        self.convention = convention;
    }

    fn check_input(&self, x: &SeqBatch) -> Result<()> {
        if x.steps == 0 {
            return Err(NnError::EmptySequence);
        }
        if x.dim != self.input_dim {
            return Err(NnError::ShapeMismatch {
                what: "gru layer input".into(),
                expected: self.input_dim,
                found: x.dim,
            });
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, x: &SeqBatch, direction: Direction) -> Result<SeqBatch> {
        self.forward(x, direction).map(|(out, _)| out)
    }

    pub fn forward(&self, x: &SeqBatch, direction: Direction) -> Result<(SeqBatch, GruCache)> {
        self.check_input(x)?;
        let x = match direction {
            Direction::Forward => x.clone(),
            Direction::Backward => x.reversed(),
        };
        let (steps, batch, hd) = (x.steps, x.batch, self.hidden_dim);
        let h3 = 3 * hd;
        let w = self.w.value.data();
        let u = self.u.value.data();

        // Input projections for all steps at once: (T·B × in)·(in × 3h) + b.
        let mut gates = SeqBatch::zeros(steps, batch, h3);
        gemm(
            steps * batch,
            self.input_dim,
            h3,
            1.0,
            View::rm(&x.data, self.input_dim),
            View::rm(w, h3),
            0.0,
            &mut gates.data,
            h3,
        );
        add_row_bias(&mut gates.data, self.b.value.data());

        let mut gated = SeqBatch::zeros(steps, batch, hd);
        let mut h = SeqBatch::zeros(steps, batch, hd);
        let zeros = vec![0.0; batch * hd];

        for t in 0..steps {
            let (h_done, h_rest) = h.data.split_at_mut(t * batch * hd);
            let h_prev: &[f64] = if t == 0 { &zeros } else { &h_done[(t - 1) * batch * hd..] };
            let h_t = &mut h_rest[..batch * hd];
            let a = gates.step_mut(t);

            if t > 0 {
                // z and r pre-activations pick up h_prev · U_{z,r}.
                gemm(batch, hd, 2 * hd, 1.0, View::rm(h_prev, hd), View::rm(u, h3), 1.0, a, h3);
            }
            for b in 0..batch {
                for v in &mut a[b * h3..b * h3 + 2 * hd] {
                    *v = sigmoid(*v);
                }
            }
            let g = gated.step_mut(t);
            for b in 0..batch {
                let r = &a[b * h3 + hd..b * h3 + 2 * hd];
                let hp = &h_prev[b * hd..(b + 1) * hd];
                for ((gv, rv), hv) in g[b * hd..(b + 1) * hd].iter_mut().zip(r).zip(hp) {
                    *gv = rv * hv;
                }
            }
            if t > 0 {
                gemm(batch, hd, hd, 1.0, View::rm(g, hd), View::rm(&u[2 * hd..], h3), 1.0, &mut a[2 * hd..], h3);
            }
            for b in 0..batch {
                let row = &mut a[b * h3..(b + 1) * h3];
                for v in &mut row[2 * hd..] {
                    *v = v.tanh();
                }
                let (zr, cand) = row.split_at(2 * hd);
                let hp = &h_prev[b * hd..(b + 1) * hd];
                for j in 0..hd {
                    h_t[b * hd + j] = self.convention.merge(zr[j], hp[j], cand[j]);
                }
            }
        }

        let out = match direction {
            Direction::Forward => h.clone(),
            Direction::Backward => h.reversed(),
        };
        Ok((
            out,
            GruCache {
                direction,
                x,
                gates,
                gated,
                h,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the layer input. `d_out` is aligned with the layer output.
    pub fn backward(&mut self, cache: &GruCache, d_out: &SeqBatch) -> Result<SeqBatch> {
        let (steps, batch, hd) = (cache.h.steps, cache.h.batch, self.hidden_dim);
        if d_out.steps != steps || d_out.batch != batch || d_out.dim != hd {
            return Err(NnError::ShapeMismatch {
                what: "gru output gradient".into(),
                expected: steps * batch * hd,
                found: d_out.data.len(),
            });
        }
        let d_h_all = match cache.direction {
            Direction::Forward => d_out.clone(),
            Direction::Backward => d_out.reversed(),
        };
        let h3 = 3 * hd;
        let u = self.u.value.data().to_vec();
        let du = self.u.grad.data_mut();

        let mut d_a = SeqBatch::zeros(steps, batch, h3);
        let mut dh_next = vec![0.0; batch * hd];
        let mut dh = vec![0.0; batch * hd];
        let mut d_gated = vec![0.0; batch * hd];
        let zeros = vec![0.0; batch * hd];

        for t in (0..steps).rev() {
            let h_prev: &[f64] = if t == 0 { &zeros } else { cache.h.step(t - 1) };
            let a = cache.gates.step(t);
            let da = d_a.step_mut(t);
            for (i, v) in dh.iter_mut().enumerate() {
                *v = d_h_all.step(t)[i] + dh_next[i];
            }

            // Through the merge and the candidate tanh.
            for b in 0..batch {
                let row = &a[b * h3..(b + 1) * h3];
                let drow = &mut da[b * h3..(b + 1) * h3];
                for j in 0..hd {
                    let (z, cand, hp) = (row[j], row[2 * hd + j], h_prev[b * hd + j]);
                    let g = dh[b * hd + j];
                    let (dz, dcand, dprev) = match self.convention {
                        MergeConvention::KeepPrevious => (g * (hp - cand), g * (1.0 - z), g * z),
                        MergeConvention::TakeCandidate => (g * (cand - hp), g * z, g * (1.0 - z)),
                    };
                    drow[j] = dz * z * (1.0 - z);
                    drow[2 * hd + j] = dcand * (1.0 - cand * cand);
                    dh_next[b * hd + j] = dprev;
                }
            }

            if t > 0 {
                // d(r ∘ h_prev) = da_h · U_hᵀ
                gemm(batch, hd, hd, 1.0, View::rm(&da[2 * hd..], h3), View::tr(&u[2 * hd..], h3), 0.0, &mut d_gated, hd);
                for b in 0..batch {
                    for j in 0..hd {
                        let k = b * hd + j;
                        let r = a[b * h3 + hd + j];
                        let dr = d_gated[k] * h_prev[k];
                        dh_next[k] += d_gated[k] * r;
                        da[b * h3 + hd + j] = dr * r * (1.0 - r);
                    }
                }
                // dh_prev += [da_z | da_r] · U_{z,r}ᵀ
                gemm(batch, 2 * hd, hd, 1.0, View::rm(da, h3), View::tr(&u, h3), 1.0, &mut dh_next, hd);
                // dU_{z,r} += h_prevᵀ · [da_z | da_r];  dU_h += (r ∘ h_prev)ᵀ · da_h
                gemm(hd, batch, 2 * hd, 1.0, View::tr(h_prev, hd), View::rm(da, h3), 1.0, du, h3);
                gemm(
                    hd,
                    batch,
                    hd,
                    1.0,
                    View::tr(cache.gated.step(t), hd),
                    View::rm(&da[2 * hd..], h3),
                    1.0,
                    &mut du[2 * hd..],
                    h3,
                );
            } else {
                // h_0 = 0: r has no effect on the candidate.
                for b in 0..batch {
                    for j in 0..hd {
                        da[b * h3 + hd + j] = 0.0;
                    }
                }
            }
        }

        let rows = steps * batch;
        gemm(
            self.input_dim,
            rows,
            h3,
            1.0,
            View::tr(&cache.x.data, self.input_dim),
            View::rm(&d_a.data, h3),
            1.0,
            self.w.grad.data_mut(),
            h3,
        );
        accumulate_col_sums(&d_a.data, h3, self.b.grad.data_mut());
        let mut dx = SeqBatch::zeros(steps, batch, self.input_dim);
        gemm(
            rows,
            h3,
            self.input_dim,
            1.0,
            View::rm(&d_a.data, h3),
            View::tr(self.w.value.data(), h3),
            0.0,
            &mut dx.data,
            self.input_dim,
        );
        Ok(match cache.direction {
            Direction::Forward => dx,
            Direction::Backward => dx.reversed(),
        })
    }
}

impl Module for GruLayer {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("w".into(), &self.w), ("u".into(), &self.u), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("w".into(), &mut self.w), ("u".into(), &mut self.u), ("b".into(), &mut self.b)]
    }
}
