//! Shared domain types for mechanical systems: generalized coordinates and
//! velocities, control inputs, and model-input vectors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::diff::Var;

/// State of a mechanical system with `dim()` degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Generalized coordinates (rad or m per component).
    pub q: Vec<f64>,
    /// Generalized velocities (rad/s or m/s per component).
    pub qdot: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>) -> Self {
        assert_eq!(q.len(), qdot.len(), "q and qdot lengths differ");
        assert!(!q.is_empty(), "state must have at least one coordinate");
        State { q, qdot }
    }

    pub fn zeros(dim: usize) -> Self {
        State::new(vec![0.0; dim], vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }

    /// Flat `[q.., qdot..]` layout used by initial-state distributions and
    /// trajectory logs.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.q.clone();
        out.extend_from_slice(&self.qdot);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len() % 2 == 0);
        let d = flat.len() / 2;
        State::new(flat[..d].to_vec(), flat[d..].to_vec())
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q={:?} qdot={:?}", self.q, self.qdot)
    }
}

/// Control input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub u: Vec<f64>,
}

impl Control {
    pub fn new(u: Vec<f64>) -> Self {
        assert!(!u.is_empty(), "control must have at least one component");
        Control { u }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite())
    }
}

/// One row of Gaussian-process input: a (possibly trigonometrically extended)
/// state representation concatenated with the control.
#[derive(Debug, Clone, PartialEq)]
pub struct GpInput(pub Vec<f64>);

impl GpInput {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl core::ops::Deref for GpInput {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Tape-valued state used inside differentiable rollouts.
#[derive(Clone)]
pub struct VarState<'t> {
    pub q: Vec<Var<'t>>,
    pub qdot: Vec<Var<'t>>,
}

impl<'t> VarState<'t> {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn values(&self) -> State {
        State::new(
            self.q.iter().map(|v| v.value()).collect(),
            self.qdot.iter().map(|v| v.value()).collect(),
        )
    }
}
