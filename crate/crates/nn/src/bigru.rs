use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::gru::{Direction, GruCache, GruCellParams, GruLayer, MergeConvention};
use crate::module::{with_prefix, with_prefix_mut, Module};
use crate::tensor::{Matrix, Param, SeqBatch};

/// Forward and backward GRUs over the same input, merged by elementwise sum:
/// `y_t = h→_t + h←_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: GruLayer,
    pub bwd: GruLayer,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

impl BiGru {
    pub fn new(input_dim: usize, hidden_dim: usize, convention: MergeConvention, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fwd: GruLayer::new(input_dim, hidden_dim, convention, rng),
            bwd: GruLayer::new(input_dim, hidden_dim, convention, rng),
        }
    }

    pub fn from_layers(fwd: GruLayer, bwd: GruLayer) -> Result<Self> {
        if fwd.hidden_dim() != bwd.hidden_dim() {
            return Err(NnError::ShapeMismatch {
                what: "bigru hidden size".into(),
                expected: fwd.hidden_dim(),
                found: bwd.hidden_dim(),
            });
        }
        if fwd.input_dim() != bwd.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "bigru input size".into(),
                expected: fwd.input_dim(),
                found: bwd.input_dim(),
            });
        }
        Ok(Self { fwd, bwd })
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    pub fn infer(&self, x: &SeqBatch) -> Result<SeqBatch> {
        let mut y = self.fwd.infer(x, Direction::Forward)?;
        y.add_assign(&self.bwd.infer(x, Direction::Backward)?);
        Ok(y)
    }

    pub fn forward(&self, x: &SeqBatch) -> Result<(SeqBatch, BiGruCache)> {
        let (mut y, fwd) = self.fwd.forward(x, Direction::Forward)?;
        let (yb, bwd) = self.bwd.forward(x, Direction::Backward)?;
        y.add_assign(&yb);
        Ok((y, BiGruCache { fwd, bwd }))
    }

    pub fn backward(&mut self, cache: &BiGruCache, d_out: &SeqBatch) -> Result<SeqBatch> {
        let mut dx = self.fwd.backward(&cache.fwd, d_out)?;
        dx.add_assign(&self.bwd.backward(&cache.bwd, d_out)?);
        Ok(dx)
    }
}

impl Module for BiGru {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = with_prefix("fwd", self.fwd.params());
        out.extend(with_prefix("bwd", self.bwd.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = with_prefix_mut("fwd", self.fwd.params_mut());
        out.extend(with_prefix_mut("bwd", self.bwd.params_mut()));
        out
    }
}

/// Bidirectional GRU over one `T × input_dim` sequence.
pub fn bigru_forward(
    fwd_params: &GruCellParams,
    bwd_params: &GruCellParams,
    inputs: &Matrix,
    convention: MergeConvention,
) -> Result<Matrix> {
    let layer = BiGru::from_layers(
        GruLayer::from_cell_params(fwd_params, convention)?,
        GruLayer::from_cell_params(bwd_params, convention)?,
    )?;
    Ok(layer.infer(&SeqBatch::from_matrix(inputs))?.example(0))
}
