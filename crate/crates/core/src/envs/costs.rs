//! Saturating cost functions for the supported tasks. Each maps a state into
//! a bounded range (`[0, 1)` for the exponential costs; the Furuta barrier
//! adds up to 2 more) and is differentiable everywhere, with the convention
//! that the derivative of `|theta|` at zero is taken as 0.

use crate::diff::{Tape, Var};
use crate::fmath;
use crate::rollout::CostFunction;
use crate::state::{State, VarState};

const PI: f64 = core::f64::consts::PI;

/// Cart-pole swing-up cost
/// `1 - exp(-((|theta| - pi)/l_theta)^2 - (p/l_p)^2)`.
///
/// The absolute value admits both equivalent upright targets `theta = +/-pi`.
/// State layout: `q = [p, theta]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleAngleCost {
    pub l_theta: f64,
    pub l_p: f64,
}

impl Default for CartPoleAngleCost {
    fn default() -> Self {
        CartPoleAngleCost {
            l_theta: 3.0,
            l_p: 1.0,
        }
    }
}

impl CostFunction for CartPoleAngleCost {
    fn cost(&self, state: &State) -> f64 {
        let a = (fmath::abs(state.q[1]) - PI) / self.l_theta;
        let b = state.q[0] / self.l_p;
        1.0 - fmath::exp(-a * a - b * b)
    }

    fn cost_var<'t>(&self, _tape: &'t Tape, state: &VarState<'t>) -> Var<'t> {
        let a = (state.q[1].abs() - PI) * (1.0 / self.l_theta);
        let b = state.q[0] * (1.0 / self.l_p);
        1.0 - (-(a * a) - b * b).exp()
    }
}

/// Saturated squared distance between the pole tip and the upright target:
/// `1 - exp(-d^2 / (2 * 0.25^2))` with
/// `d^2 = p^2 + 2 p L sin(theta) + 2 L^2 (1 + cos(theta))`.
///
/// Zero exactly when the tip sits at the target `(0, L)`; also the common
/// evaluation metric for cross-algorithm comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipCost {
    pub pole_len: f64,
}

impl TipCost {
    pub fn squared_distance(&self, p: f64, theta: f64) -> f64 {
        let l = self.pole_len;
        p * p + 2.0 * p * l * fmath::sin(theta) + 2.0 * l * l * (1.0 + fmath::cos(theta))
    }
}

impl CostFunction for TipCost {
    fn cost(&self, state: &State) -> f64 {
        let d2 = self.squared_distance(state.q[0], state.q[1]);
        1.0 - fmath::exp(-0.5 * d2 / (0.25 * 0.25))
    }

    fn cost_var<'t>(&self, _tape: &'t Tape, state: &VarState<'t>) -> Var<'t> {
        let (p, theta) = (state.q[0], state.q[1]);
        let l = self.pole_len;
        let d2 = p * p + p * theta.sin() * (2.0 * l) + (theta.cos() + 1.0) * (2.0 * l * l);
        1.0 - (d2 * (-0.5 / (0.25 * 0.25))).exp()
    }
}

/// Furuta-pendulum swing-up cost: drives the arm angle to zero and the
/// pendulum to `+/-pi`, plus a two-sigmoid barrier penalizing arm excursions
/// beyond `+/- (3/4) pi`. State layout: `q = [theta_h, theta_v]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FurutaCost;

impl FurutaCost {
    pub fn barrier(theta_h: f64) -> f64 {
        let s1 = 1.0 / (1.0 + fmath::exp(-10.0 * (-0.75 * PI - theta_h)));
        let s2 = 1.0 / (1.0 + fmath::exp(-10.0 * (theta_h - 0.75 * PI)));
        s1 + s2
    }
}

impl CostFunction for FurutaCost {
    fn cost(&self, state: &State) -> f64 {
        let (th_h, th_v) = (state.q[0], state.q[1]);
        let a = th_h / 2.0;
        let b = (fmath::abs(th_v) - PI) / 2.0;
        1.0 - fmath::exp(-a * a - b * b) + Self::barrier(th_h)
    }

    fn cost_var<'t>(&self, _tape: &'t Tape, state: &VarState<'t>) -> Var<'t> {
        let (th_h, th_v) = (state.q[0], state.q[1]);
        let a = th_h * 0.5;
        let b = (th_v.abs() - PI) * 0.5;
        let main = 1.0 - (-(a * a) - b * b).exp();
        let s1 = 1.0 / (((th_h + 0.75 * PI) * 10.0).exp() + 1.0);
        let s2 = 1.0 / (((th_h - 0.75 * PI) * (-10.0)).exp() + 1.0);
        main + s1 + s2
    }
}

/// Ball-and-plate stabilization cost
/// `1 - exp(-(bx/0.15)^2 - (by/0.15)^2 - th1^2 - th2^2)`.
/// State layout: `q = [bx, by, theta1, theta2]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BallPlateCost;

impl CostFunction for BallPlateCost {
    fn cost(&self, state: &State) -> f64 {
        let bx = state.q[0] / 0.15;
        let by = state.q[1] / 0.15;
        let (t1, t2) = (state.q[2], state.q[3]);
        1.0 - fmath::exp(-bx * bx - by * by - t1 * t1 - t2 * t2)
    }

    fn cost_var<'t>(&self, _tape: &'t Tape, state: &VarState<'t>) -> Var<'t> {
        let bx = state.q[0] * (1.0 / 0.15);
        let by = state.q[1] * (1.0 / 0.15);
        let (t1, t2) = (state.q[2], state.q[3]);
        let g = bx * bx + by * by + t1 * t1 + t2 * t2;
        1.0 - (-g).exp()
    }
}
