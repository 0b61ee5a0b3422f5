use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::tensor::{Param, Tensor};

/// Anything that owns trainable parameters.
///
/// Both methods must list parameters in the same, stable order; optimizers and
/// the parameter file format rely on it.
pub trait Module {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }
}

pub fn with_prefix<'a>(prefix: &str, items: Vec<(String, &'a Param)>) -> Vec<(String, &'a Param)> {
    items
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

pub fn with_prefix_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Param)>,
) -> Vec<(String, &'a mut Param)> {
    items
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}
