//! Ground-truth cart-pole: a cart of mass `m_c` on a horizontal track with
//! viscous friction, carrying a massless rigid rod of length `L` with a point
//! mass `m_p` at the tip. The pole angle is zero at the stable downward
//! equilibrium; the tip sits at `(p + L sin(theta), -L cos(theta))`, so the
//! upright target is `theta = +/- pi`.
//!
//! Equations of motion (force `u` on the cart, friction `-b pdot`):
//!
//! ```text
//! pddot = (u - b pdot + m_p sin(theta) (g cos(theta) + L thetadot^2))
//!         / (m_c + m_p - m_p cos^2(theta))
//! thetaddot = -(g sin(theta) + cos(theta) pddot) / L
//! ```
//!
//! Integration is RK4 with millisecond substeps under zero-order-hold
//! control, far more accurate than anything the learned model resolves.

use alloc::vec;

use crate::dynamics::StateEncoder;
use crate::fmath;
use crate::rng::Seed;
use crate::rollout::InitialStateDist;
use crate::state::State;

/// Physical and integration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_len: f64,
    /// Viscous cart-ground friction coefficient.
    pub friction: f64,
    pub gravity: f64,
    /// RK4 substep inside one control period.
    pub substep: f64,
    /// Control sample time.
    pub ts: f64,
    /// Process-noise standard deviation per flat state dimension
    /// `[p, theta, pdot, thetadot]`; zero by default.
    pub process_noise_std: [f64; 4],
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 0.5,
            pole_mass: 0.5,
            pole_len: 0.5,
            friction: 0.1,
            gravity: 9.81,
            substep: 1e-3,
            ts: 1.0 / 30.0,
            process_noise_std: [0.0; 4],
        }
    }
}

impl CartPoleParams {
    pub fn at_rate(hz: f64) -> Self {
        CartPoleParams {
            ts: 1.0 / hz,
            ..Default::default()
        }
    }
}

/// Flat state layout `[p, theta, pdot, thetadot]` (matching
/// `State { q: [p, theta], qdot: [pdot, thetadot] }`).
fn derivs(pr: &CartPoleParams, x: &[f64; 4], u: f64) -> [f64; 4] {
    let (pdot, theta, thetadot) = (x[2], x[1], x[3]);
    let s = fmath::sin(theta);
    let c = fmath::cos(theta);
    let denom = pr.cart_mass + pr.pole_mass - pr.pole_mass * c * c;
    let pddot = (u - pr.friction * pdot
        + pr.pole_mass * s * (pr.gravity * c + pr.pole_len * thetadot * thetadot))
        / denom;
    let thetaddot = -(pr.gravity * s + c * pddot) / pr.pole_len;
    [pdot, thetadot, pddot, thetaddot]
}

fn rk4_substep(pr: &CartPoleParams, x: &[f64; 4], u: f64, h: f64) -> [f64; 4] {
    let k1 = derivs(pr, x, u);
    let mut x2 = *x;
    for i in 0..4 {
        x2[i] = x[i] + 0.5 * h * k1[i];
    }
    let k2 = derivs(pr, &x2, u);
    for i in 0..4 {
        x2[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = derivs(pr, &x2, u);
    for i in 0..4 {
        x2[i] = x[i] + h * k3[i];
    }
    let k4 = derivs(pr, &x2, u);
    let mut out = *x;
    for i in 0..4 {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advances the plant by one control period under zero-order-hold force.
/// Gaussian process noise (if configured) is added once per control period.
pub fn cartpole_step(
    pr: &CartPoleParams,
    state: &State,
    force: f64,
    noise_seed: Option<&Seed>,
) -> State {
    debug_assert!(force.is_finite(), "non-finite force");
    let mut x = [state.q[0], state.q[1], state.qdot[0], state.qdot[1]];
    let n_sub = fmath::round(pr.ts / pr.substep).max(1.0) as usize;
    let h = pr.ts / n_sub as f64;
    for _ in 0..n_sub {
        x = rk4_substep(pr, &x, force, h);
    }
    if let Some(seed) = noise_seed {
        let mut rng = seed.rng();
        for (xi, sd) in x.iter_mut().zip(&pr.process_noise_std) {
            if *sd > 0.0 {
                *xi += sd * rng.normal();
            }
        }
    }
    State::new(vec![x[0], x[1]], vec![x[2], x[3]])
}

/// Total mechanical energy; conserved when friction and force are zero.
pub fn cartpole_energy(pr: &CartPoleParams, state: &State) -> f64 {
    let (p_dot, theta, theta_dot) = (state.qdot[0], state.q[1], state.qdot[1]);
    let c = fmath::cos(theta);
    let kinetic = 0.5 * (pr.cart_mass + pr.pole_mass) * p_dot * p_dot
        + pr.pole_mass * pr.pole_len * c * p_dot * theta_dot
        + 0.5 * pr.pole_mass * pr.pole_len * pr.pole_len * theta_dot * theta_dot;
    let potential = -pr.pole_mass * pr.gravity * pr.pole_len * c;
    kinetic + potential
}

/// The model-input map for this plant: `[p, pdot, thetadot, sin, cos]`.
pub fn cartpole_encoder() -> StateEncoder {
    StateEncoder::new(vec![false, true])
}

/// Initial-state distribution `N(0, 1e-4 I)` over `[p, theta, pdot,
/// thetadot]`.
pub fn cartpole_init_dist() -> InitialStateDist {
    InitialStateDist::gaussian(&[0.0; 4], &[0.01; 4])
}

/// Convenience bundle of the plant bits the harness wires together.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        CartPole { params }
    }

    pub fn step(&self, state: &State, force: f64, noise_seed: Option<&Seed>) -> State {
        cartpole_step(&self.params, state, force, noise_seed)
    }
}
