use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
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

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "state for {} values, got {} params and {} grads",
                    self.first_moment.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: self.step });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= learning_rate * (m / bias1) / ((v / bias2).sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut p = [1.5, -2.0];
        state.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.5, -2.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(1, AdamConfig::with_learning_rate(0.1));
        let mut p = [0.0];
        state.step(&mut p, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1 => update = 0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut state = AdamState::new(1, AdamConfig::with_learning_rate(0.05));
        let mut x = [0.0];
        for _ in 0..200 {
            let g = [2.0 * (x[0] - 2.0)];
            state.step(&mut x, &g).unwrap();
        }
        assert!((x[0] - 2.0).abs() < 0.01, "x = {}", x[0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut x = [0.0];
        assert!(matches!(
            state.step(&mut x, &[f64::NAN]),
            Err(Error::NonFiniteGradient { step: 0 })
        ));
        assert_eq!(x, [0.0]);
    }
}
