//! Adam with bias correction, shared by policy optimization and GP
//! hyperparameter training.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fmath;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptError {
    ShapeMismatch { params: usize, grad: usize },
}

impl fmt::Display for OptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptError::ShapeMismatch { params, grad } => {
                write!(f, "parameter length {params} does not match gradient length {grad}")
            }
        }
    }
}

/// Optimizer state: first/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One descent step in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), OptError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(OptError::ShapeMismatch {
                params: params.len(),
                grad: grad.len(),
            });
        }
        self.t += 1;
        let b1t = 1.0 - fmath::powi(self.beta1, self.t as i32);
        let b2t = 1.0 - fmath::powi(self.beta2, self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.learning_rate * m_hat / (fmath::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(3, 0.1);
        let mut p = [1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // bias-corrected Adam: m_hat = g, v_hat = g^2, so the first update is
        // lr * g / (|g| + eps) ~ lr * sign(g)
        let mut adam = AdamState::new(1, 0.05);
        let mut p = [0.0];
        adam.step(&mut p, &[2.7]).unwrap();
        assert!((p[0] + 0.05).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = AdamState::new(1, 0.1);
        let mut p = [1.0];
        for _ in 0..200 {
            let g = [2.0 * p[0]];
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-2, "{}", p[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = [0.0];
        assert!(adam.step(&mut p, &[1.0]).is_err());
    }
}
