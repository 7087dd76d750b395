//! Core algorithms for model-based reinforcement learning on partially
//! measurable systems: mechanical systems where only positions are measured
//! and velocities must be estimated by state observers.
//!
//! The crate provides
//!
//! - a tape-based reverse-mode differentiation substrate ([`diff`]),
//! - exact Gaussian-process regression with several kernel families ([`gp`]),
//! - a velocity-delta one-step dynamics model learned from position-only
//!   trajectories ([`dynamics`]),
//! - measurement-noise models and online/offline state observers
//!   ([`observers`]),
//! - a squashed RBF-network policy ([`policy`]),
//! - a Monte Carlo particle rollout engine that estimates the expected
//!   cumulative cost and its policy gradient, optionally simulating the
//!   measurement system and the online observer inside the rollout
//!   ([`rollout`]),
//! - ground-truth plants, cost functions, and exploration signal generators
//!   ([`envs`]).
//!
//! Everything here is `no_std` + `alloc`: pure deterministic float math with
//! no IO. File formats, configuration, and the experiment harness live in the
//! companion CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diff;
pub mod dynamics;
pub mod envs;
pub mod fmath;
pub mod gp;
pub mod linalg;
pub mod observers;
pub mod opt;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod state;
