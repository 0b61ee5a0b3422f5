use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::module::Module;
use crate::tensor::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first and second moments per parameter, in the
/// order the module lists its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one bias-corrected Adam update using the gradients stored in
    /// each parameter. Nothing is modified if any gradient is non-finite.
    pub fn update<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        adam_step(self, module.params_mut())
    }
}

pub fn adam_step(state: &mut AdamState, mut params: Vec<(String, &mut Param)>) -> Result<()> {
    if state.first.is_empty() {
        state.first = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(NnError::ShapeMismatch {
            what: "adam parameter count".into(),
            expected: state.first.len(),
            found: params.len(),
        });
    }
    for ((name, p), m) in params.iter().zip(&state.first) {
        if p.value.len() != m.len() {
            return Err(NnError::ShapeMismatch {
                what: format!("adam moments for `{name}`"),
                expected: m.len(),
                found: p.value.len(),
            });
        }
        if !p.grad.is_finite() {
            return Err(NnError::NonFiniteGradient { param: name.clone() });
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let bias1 = 1.0 - beta1.powf(state.step as f64);
    let bias2 = 1.0 - beta2.powf(state.step as f64);
    for (((_, p), m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = p.grad.data().to_vec();
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(value: f64, grad: f64) -> Param {
        Param {
            value: Tensor::from_vec(&[1], vec![value]).unwrap(),
            grad: Tensor::from_vec(&[1], vec![grad]).unwrap(),
        }
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = scalar(0.7, 0.0);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut s, vec![("p".into(), &mut p)]).unwrap();
        assert_eq!(p.value.data(), &[0.7]);
        assert_eq!(s.first_moments(), &[vec![0.0]]);
        assert_eq!(s.second_moments(), &[vec![0.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0, 1.0);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut s, vec![("p".into(), &mut p)]).unwrap();
        // m̂ = v̂ = 1 at t = 1, so the step is lr / (1 + ε).
        let expected = 1e-3 / (1.0 + 1e-8);
        assert!((p.value.data()[0] + expected).abs() < 1e-18);
        assert!((p.value.data()[0] + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0, f64::NAN);
        let mut s = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut s, vec![("enc.w".into(), &mut p)]).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { ref param } if param == "enc.w"));
        assert_eq!(p.value.data(), &[1.0]);
        assert_eq!(s.step, 0);
    }
}
