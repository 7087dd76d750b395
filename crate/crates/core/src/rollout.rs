//! Monte Carlo policy optimization on the learned model: M-particle
//! differentiable rollouts, the cumulative-cost estimate
//! `J = sum_t mean_m c(x_t^m)`, its reverse-mode policy gradient, and Adam
//! updates.
//!
//! Two rollout modes exist. `FullState` feeds the policy the true model
//! state. `ObservedState` additionally simulates the measurement system and
//! the online observer inside the rollout: positions are corrupted with
//! measurement noise, the per-particle observer chain turns measurement
//! histories into observed states, and the policy only ever sees those. The
//! whole pipeline stays on the tape, so the gradient accounts for the
//! observer dynamics.
//!
//! Determinism: every draw is keyed by `(iteration, purpose, particle, step)`
//! child streams of one seed. The same seed gives bit-identical costs,
//! gradients, and trajectories; the full-state and observed-state modes
//! consume disjoint streams, so they see identical process noise.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::diff::{Tape, Var};
use crate::dynamics::{DeltaModel, DynamicsError};
use crate::linalg::pairwise_sum;
use crate::observers::{MeasurementModel, ObserverChain, ObserverError};
use crate::policy::{PolicyError, RbfPolicy};
use crate::rng::Seed;
use crate::state::{State, VarState};

pub use crate::opt::{AdamState, OptError};

const STREAM_INIT: u64 = 0;
const STREAM_GP: u64 = 1;
const STREAM_MEAS: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutError {
    NonFiniteState { step: usize, particle: usize },
    NonFiniteCost { step: usize },
    NonFinitePrimitive { op: &'static str },
    Config(&'static str),
    Dynamics(DynamicsError),
    Observer(ObserverError),
    Policy(PolicyError),
}

impl fmt::Display for RolloutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RolloutError::NonFiniteState { step, particle } => {
                write!(f, "non-finite state at step {step}, particle {particle}")
            }
            RolloutError::NonFiniteCost { step } => write!(f, "non-finite cost at step {step}"),
            RolloutError::NonFinitePrimitive { op } => {
                write!(f, "non-finite value produced by `{op}`")
            }
            RolloutError::Config(msg) => write!(f, "invalid rollout config: {msg}"),
            RolloutError::Dynamics(e) => write!(f, "dynamics: {e}"),
            RolloutError::Observer(e) => write!(f, "observer: {e}"),
            RolloutError::Policy(e) => write!(f, "policy: {e}"),
        }
    }
}

impl From<DynamicsError> for RolloutError {
    fn from(e: DynamicsError) -> Self {
        RolloutError::Dynamics(e)
    }
}

impl From<ObserverError> for RolloutError {
    fn from(e: ObserverError) -> Self {
        RolloutError::Observer(e)
    }
}

impl From<PolicyError> for RolloutError {
    fn from(e: PolicyError) -> Self {
        RolloutError::Policy(e)
    }
}

/// What the policy sees during particle simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Policy input is the true model state.
    FullState,
    /// Policy input is the observed state produced by the measurement model
    /// and the online observer chain simulated inside the rollout.
    ObservedState,
}

/// Per-dimension initial-state distribution over the flat `[q.., qdot..]`
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub enum DimDist {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialStateDist {
    pub dims: Vec<DimDist>,
}

impl InitialStateDist {
    pub fn gaussian(means: &[f64], stds: &[f64]) -> Self {
        InitialStateDist {
            dims: means
                .iter()
                .zip(stds)
                .map(|(&mean, &std)| DimDist::Gaussian { mean, std })
                .collect(),
        }
    }

    pub fn sample(&self, rng: &mut crate::rng::StreamRng) -> State {
        let flat: Vec<f64> = self
            .dims
            .iter()
            .map(|d| match d {
                DimDist::Gaussian { mean, std } => mean + std * rng.normal(),
                DimDist::Uniform { lo, hi } => rng.uniform_in(*lo, *hi),
            })
            .collect();
        State::from_flat(&flat)
    }
}

/// Immediate cost `c(x)` in `[0, c_max]`, evaluable both plainly and on the
/// tape.
pub trait CostFunction: Send + Sync {
    fn cost(&self, state: &State) -> f64;
    fn cost_var<'t>(&self, tape: &'t Tape, state: &VarState<'t>) -> Var<'t>;
}

/// Configuration of one particle-simulation problem.
pub struct RolloutConfig {
    /// Steps per rollout; costs are summed over `T + 1` states.
    pub horizon: usize,
    /// Particle count M.
    pub particles: usize,
    pub mode: Mode,
    pub cost: Box<dyn CostFunction>,
    pub init: InitialStateDist,
    pub measurement: MeasurementModel,
    pub observer: ObserverChain,
}

impl RolloutConfig {
    fn validate(&self, model: &DeltaModel, policy: &RbfPolicy) -> Result<(), RolloutError> {
        if self.horizon < 1 {
            return Err(RolloutError::Config("horizon must be >= 1"));
        }
        if self.particles < 1 {
            return Err(RolloutError::Config("particle count must be >= 1"));
        }
        if self.init.dims.len() != 2 * model.dim_q() {
            return Err(RolloutError::Config("initial distribution dimension"));
        }
        if policy.input_dim() != model.encoder().encoded_dim() {
            return Err(RolloutError::Config("policy input dimension"));
        }
        if policy.output_dim() != model.dim_u() {
            return Err(RolloutError::Config("policy output dimension"));
        }
        if self.mode == Mode::ObservedState {
            if self.measurement.dim() != model.dim_q() {
                return Err(RolloutError::Config("measurement dimension"));
            }
            if (self.observer.ts - model.ts()).abs() > 1e-12 {
                return Err(RolloutError::Config("observer sample time"));
            }
        }
        Ok(())
    }
}

/// Result of one differentiable particle simulation.
pub struct SimOutput<'t> {
    /// Monte Carlo cumulative cost, still attached to the tape.
    pub cost: Var<'t>,
    /// Value snapshots of every particle state, `M x (T+1)`.
    pub trajectories: Vec<Vec<State>>,
}

/// Simulates M particles for T steps on the tape and returns the
/// differentiable cumulative cost. `params` are the lifted policy parameters
/// the gradient should flow into.
pub fn simulate_particles_var<'t>(
    tape: &'t Tape,
    cfg: &RolloutConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    params: &[Var<'t>],
    seed: &Seed,
) -> Result<SimOutput<'t>, RolloutError> {
    cfg.validate(model, policy)?;
    let m_particles = cfg.particles;
    let t_steps = cfg.horizon;
    let d_q = model.dim_q();

    let gp_ops = model.register_ops(tape)?;
    let policy_ops = policy.register_ops(tape);

    let mut states: Vec<VarState<'t>> = Vec::with_capacity(m_particles);
    let mut chains = Vec::with_capacity(m_particles);
    let init_seed = seed.child(STREAM_INIT);
    let meas_seed = seed.child(STREAM_MEAS);
    for m in 0..m_particles {
        let mut rng = init_seed.child(m as u64).rng();
        let s0 = cfg.init.sample(&mut rng);
        let st = VarState {
            q: tape.vars(&s0.q),
            qdot: tape.vars(&s0.qdot),
        };
        if cfg.mode == Mode::ObservedState {
            let mut eps = vec![0.0; d_q];
            meas_seed.child(m as u64).child(0).rng().fill_normal(&mut eps);
            let qbar0 = cfg.measurement.measure_var(&st.q, &eps);
            chains.push(cfg.observer.init_state_var(&qbar0));
        }
        states.push(st);
    }

    let gp_seed = seed.child(STREAM_GP);
    let mut trajectories: Vec<Vec<State>> = states
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(t_steps + 1);
            v.push(s.values());
            v
        })
        .collect();
    let mut step_means: Vec<Var<'t>> = Vec::with_capacity(t_steps + 1);
    let mut eps_gp = vec![0.0; d_q];
    let mut eps_meas = vec![0.0; d_q];

    for t in 0..=t_steps {
        let costs: Vec<Var<'t>> = states
            .iter()
            .map(|s| cfg.cost.cost_var(tape, s))
            .collect();
        let mean = tape.sum(&costs) * (1.0 / m_particles as f64);
        if !mean.value().is_finite() {
            return Err(RolloutError::NonFiniteCost { step: t });
        }
        step_means.push(mean);
        if t == t_steps {
            break;
        }
        for m in 0..m_particles {
            let st = &states[m];
            let z = match cfg.mode {
                Mode::FullState => model.encoder().encode_var(&st.q, &st.qdot),
                Mode::ObservedState => {
                    // the t = 0 measurement happened at chain initialization
                    let qbar = if t == 0 {
                        chains[m].prev_measurement().to_vec()
                    } else {
                        meas_seed
                            .child(m as u64)
                            .child(t as u64)
                            .rng()
                            .fill_normal(&mut eps_meas);
                        cfg.measurement.measure_var(&st.q, &eps_meas)
                    };
                    let (pos, vel) =
                        cfg.observer
                            .observe_var(&mut chains[m], &qbar, Some(&st.qdot))?;
                    model.encoder().encode_var(&pos, &vel)
                }
            };
            let u = policy.evaluate_var(tape, &policy_ops, params, &z);
            gp_seed
                .child(m as u64)
                .child(t as u64)
                .rng()
                .fill_normal(&mut eps_gp);
            let next = model.predict_step_var(tape, &gp_ops, st, &u, &eps_gp);
            let snapshot = next.values();
            if !snapshot.is_finite() {
                return Err(RolloutError::NonFiniteState {
                    step: t + 1,
                    particle: m,
                });
            }
            trajectories[m].push(snapshot);
            states[m] = next;
        }
    }

    let cost = tape.sum(&step_means);
    Ok(SimOutput {
        cost,
        trajectories,
    })
}

/// Plain (non-differentiable) twin of [`simulate_particles_var`]: identical
/// draws, states, and cost for the same seed.
pub fn simulate_particles(
    cfg: &RolloutConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    seed: &Seed,
) -> Result<(f64, Vec<Vec<State>>), RolloutError> {
    cfg.validate(model, policy)?;
    let m_particles = cfg.particles;
    let t_steps = cfg.horizon;
    let d_q = model.dim_q();

    let init_seed = seed.child(STREAM_INIT);
    let meas_seed = seed.child(STREAM_MEAS);
    let gp_seed = seed.child(STREAM_GP);

    let mut states: Vec<State> = Vec::with_capacity(m_particles);
    let mut chains = Vec::with_capacity(m_particles);
    let mut eps = vec![0.0; d_q];
    for m in 0..m_particles {
        let mut rng = init_seed.child(m as u64).rng();
        let s0 = cfg.init.sample(&mut rng);
        if cfg.mode == Mode::ObservedState {
            meas_seed.child(m as u64).child(0).rng().fill_normal(&mut eps);
            let mut qbar0 = vec![0.0; d_q];
            cfg.measurement.measure(&s0.q, &eps, &mut qbar0);
            chains.push(cfg.observer.init_state(&qbar0));
        }
        states.push(s0);
    }

    let mut trajectories: Vec<Vec<State>> = states
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(t_steps + 1);
            v.push(s.clone());
            v
        })
        .collect();
    let mut step_means = Vec::with_capacity(t_steps + 1);
    let mut costs = vec![0.0; m_particles];
    let mut qbar = vec![0.0; d_q];

    for t in 0..=t_steps {
        for (c, s) in costs.iter_mut().zip(&states) {
            *c = cfg.cost.cost(s);
        }
        let mean = pairwise_sum(&costs) / m_particles as f64;
        if !mean.is_finite() {
            return Err(RolloutError::NonFiniteCost { step: t });
        }
        step_means.push(mean);
        if t == t_steps {
            break;
        }
        for m in 0..m_particles {
            let st = &states[m];
            let z = match cfg.mode {
                Mode::FullState => model.encoder().encode(st),
                Mode::ObservedState => {
                    if t == 0 {
                        qbar.copy_from_slice(chains[m].prev_measurement());
                    } else {
                        meas_seed
                            .child(m as u64)
                            .child(t as u64)
                            .rng()
                            .fill_normal(&mut eps);
                        cfg.measurement.measure(&st.q, &eps, &mut qbar);
                    }
                    let obs = cfg.observer.observe(&mut chains[m], &qbar, Some(&st.qdot))?;
                    let mut z = Vec::with_capacity(model.encoder().encoded_dim());
                    model.encoder().encode_into(&obs.pos, &obs.vel, &mut z);
                    z
                }
            };
            let u = policy.evaluate(&z);
            gp_seed
                .child(m as u64)
                .child(t as u64)
                .rng()
                .fill_normal(&mut eps);
            let next = model.predict_step(&states[m], &u, &eps)?;
            if !next.is_finite() {
                return Err(RolloutError::NonFiniteState {
                    step: t + 1,
                    particle: m,
                });
            }
            trajectories[m].push(next.clone());
            states[m] = next;
        }
    }
    Ok((pairwise_sum(&step_means), trajectories))
}

/// Cumulative cost and its gradient with respect to the flattened policy
/// parameters, from one Monte Carlo sample of the rollout graph.
pub fn policy_gradient(
    cfg: &RolloutConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    seed: &Seed,
) -> Result<(f64, Vec<f64>), RolloutError> {
    let mut tape = Tape::new();
    policy_gradient_on(&mut tape, cfg, model, policy, seed)
}

/// Like [`policy_gradient`] but reusing a caller-owned tape allocation.
pub fn policy_gradient_on(
    tape: &mut Tape,
    cfg: &RolloutConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    seed: &Seed,
) -> Result<(f64, Vec<f64>), RolloutError> {
    tape.clear();
    let params = policy.lift_params(tape);
    let out = simulate_particles_var(tape, cfg, model, policy, &params, seed)?;
    if let Some(fault) = tape.fault() {
        return Err(RolloutError::NonFinitePrimitive { op: fault.op });
    }
    let grads = tape.reverse(out.cost);
    Ok((out.cost.value(), grads.wrt_all(&params)))
}

/// One line of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub j_hat: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Result of a policy optimization run.
pub struct OptimizeOutcome {
    /// Best policy seen (by estimated cost).
    pub policy: RbfPolicy,
    pub history: Vec<IterRecord>,
    pub lr_halvings: u32,
}

/// Gradient-descent policy optimization: at each iteration a fresh Monte
/// Carlo sample of the rollout graph (new initial states, new draws) gives
/// `J` and its gradient, and Adam updates the parameters. The best iterate is
/// retained. A non-finite cost reverts to the best iterate and halves the
/// learning rate, up to three times.
pub fn optimize_policy(
    cfg: &RolloutConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    opt_iters: usize,
    learning_rate: f64,
    seed: &Seed,
) -> Result<OptimizeOutcome, RolloutError> {
    let mut current = policy.clone();
    let mut params = current.flatten();
    let mut best_params = params.clone();
    let mut best_j = f64::INFINITY;
    let mut adam = AdamState::new(params.len(), learning_rate);
    let mut history = Vec::with_capacity(opt_iters);
    let mut halvings = 0u32;
    let mut tape = Tape::new();

    for iter in 0..opt_iters {
        let iter_seed = seed.child(iter as u64);
        match policy_gradient_on(&mut tape, cfg, model, &current, &iter_seed) {
            Ok((j, grad)) => {
                if j < best_j {
                    best_j = j;
                    best_params.copy_from_slice(&params);
                }
                let grad_norm = crate::fmath::sqrt(grad.iter().map(|g| g * g).sum());
                history.push(IterRecord {
                    iter,
                    j_hat: j,
                    grad_norm,
                    lr: adam.learning_rate,
                });
                adam.step(&mut params, &grad).expect("shapes fixed");
                current.unflatten_into(&params)?;
            }
            Err(
                RolloutError::NonFiniteCost { .. }
                | RolloutError::NonFiniteState { .. }
                | RolloutError::NonFinitePrimitive { .. },
            ) => {
                if halvings >= 3 {
                    break;
                }
                halvings += 1;
                params.copy_from_slice(&best_params);
                current.unflatten_into(&params)?;
                let lr = adam.learning_rate * 0.5;
                adam = AdamState::new(params.len(), lr);
            }
            Err(e) => return Err(e),
        }
    }

    // evaluate the final iterate too, so "best" covers the whole run
    if opt_iters > 0 {
        let final_seed = seed.child(opt_iters as u64);
        if let Ok((j, _)) = simulate_particles(cfg, model, &current, &final_seed) {
            if j < best_j {
                best_params.copy_from_slice(&params);
            }
        }
    }

    let mut best = policy.clone();
    best.unflatten_into(&best_params)?;
    Ok(OptimizeOutcome {
        policy: best,
        history,
        lr_halvings: halvings,
    })
}
