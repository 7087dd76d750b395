//! The velocity-delta one-step dynamics model: one GP per velocity component
//! predicting the change in that velocity, positions advanced by
//! constant-acceleration integration
//! `q' = q + Ts qdot + (Ts/2) delta`, `qdot' = qdot + delta`.
//!
//! Training targets come from position-only trajectories through an *offline*
//! (acausal) velocity estimator: the central difference
//! `(q_{t+1} - q_{t-1}) / (2 Ts)` or a Kalman smoother. These offline
//! estimates are deliberately different from whatever online observer the
//! controller sees at run time.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::diff::{OpId, Tape, Var};
use crate::gp::{GpError, GpModel, GpSampleOp, HyperOptReport, KernelChoice};
use crate::linalg::Mat;
use crate::observers::{kalman_smooth, KalmanSpec, ObserverError};
use crate::rng::Seed;
use crate::state::{State, VarState};

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    TrajectoryTooShort { steps: usize },
    NonUniformSpacing { index: usize },
    DimensionMismatch { expected: usize, got: usize },
    Gp(GpError),
    Observer(ObserverError),
    NonFinite { step: usize },
    EmptyTrainingSet,
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::TrajectoryTooShort { steps } => {
                write!(f, "trajectory with {steps} steps is too short (need >= 3)")
            }
            DynamicsError::NonUniformSpacing { index } => {
                write!(f, "non-uniform time spacing at sample {index}")
            }
            DynamicsError::DimensionMismatch { expected, got } => {
                write!(f, "expected dimension {expected}, got {got}")
            }
            DynamicsError::Gp(e) => write!(f, "gp: {e}"),
            DynamicsError::Observer(e) => write!(f, "observer: {e}"),
            DynamicsError::NonFinite { step } => {
                write!(f, "non-finite state produced at step {step}")
            }
            DynamicsError::EmptyTrainingSet => write!(f, "no training rows"),
        }
    }
}

impl From<GpError> for DynamicsError {
    fn from(e: GpError) -> Self {
        DynamicsError::Gp(e)
    }
}

impl From<ObserverError> for DynamicsError {
    fn from(e: ObserverError) -> Self {
        DynamicsError::Observer(e)
    }
}

/// Maps a state to the model-input representation: non-angle coordinates
/// first, then all velocities, then `(sin, cos)` pairs replacing each angle
/// coordinate. Which coordinates are angles is declared per environment.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    angle_flags: Vec<bool>,
}

impl StateEncoder {
    pub fn new(angle_flags: Vec<bool>) -> Self {
        assert!(!angle_flags.is_empty());
        StateEncoder { angle_flags }
    }

    /// All coordinates plain (no trigonometric extension).
    pub fn plain(dim: usize) -> Self {
        StateEncoder {
            angle_flags: vec![false; dim],
        }
    }

    pub fn dim_q(&self) -> usize {
        self.angle_flags.len()
    }

    pub fn angle_flags(&self) -> &[bool] {
        &self.angle_flags
    }

    pub fn encoded_dim(&self) -> usize {
        let n_angles = self.angle_flags.iter().filter(|&&a| a).count();
        (self.dim_q() - n_angles) + self.dim_q() + 2 * n_angles
    }

    pub fn encode_into(&self, q: &[f64], qdot: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (qi, &ang) in q.iter().zip(&self.angle_flags) {
            if !ang {
                out.push(*qi);
            }
        }
        out.extend_from_slice(qdot);
        for (qi, &ang) in q.iter().zip(&self.angle_flags) {
            if ang {
                out.push(crate::fmath::sin(*qi));
                out.push(crate::fmath::cos(*qi));
            }
        }
    }

    pub fn encode(&self, state: &State) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        self.encode_into(&state.q, &state.qdot, &mut out);
        out
    }

    pub fn encode_var<'t>(&self, q: &[Var<'t>], qdot: &[Var<'t>]) -> Vec<Var<'t>> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        for (qi, &ang) in q.iter().zip(&self.angle_flags) {
            if !ang {
                out.push(*qi);
            }
        }
        out.extend_from_slice(qdot);
        for (qi, &ang) in q.iter().zip(&self.angle_flags) {
            if ang {
                out.push(qi.sin());
                out.push(qi.cos());
            }
        }
        out
    }
}

/// A uniformly sampled position-only trajectory with the applied controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(T+1) x d_q` measured positions.
    pub positions: Mat,
    /// `T x d_u` applied controls.
    pub controls: Mat,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, positions: Mat, controls: Mat) -> Result<Self, DynamicsError> {
        if positions.rows() != times.len() || controls.rows() + 1 != times.len() {
            return Err(DynamicsError::DimensionMismatch {
                expected: times.len(),
                got: positions.rows(),
            });
        }
        let traj = Trajectory {
            times,
            positions,
            controls,
        };
        traj.validate_spacing()?;
        Ok(traj)
    }

    pub fn steps(&self) -> usize {
        self.controls.rows()
    }

    pub fn ts(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    fn validate_spacing(&self) -> Result<(), DynamicsError> {
        if self.times.len() < 2 {
            return Err(DynamicsError::TrajectoryTooShort { steps: 0 });
        }
        let ts = self.ts();
        for i in 1..self.times.len() {
            let dt = self.times[i] - self.times[i - 1];
            if (dt - ts).abs() > 1e-9 * ts.abs().max(1e-12) {
                return Err(DynamicsError::NonUniformSpacing { index: i });
            }
        }
        Ok(())
    }
}

/// Offline (acausal) velocity estimator for training-set construction.
#[derive(Debug, Clone, PartialEq)]
pub enum OfflineFilterKind {
    /// `(q_{t+1} - q_{t-1}) / (2 Ts)`.
    CentralDifference,
    /// Per-coordinate constant-velocity Kalman smoother; also replaces the
    /// positions with their smoothed values.
    KalmanSmoother {
        process_intensity: f64,
        meas_var: f64,
        init_pos_var: f64,
        init_vel_var: f64,
    },
}

/// Filter kind plus an invocation counter, so the harness can assert the
/// offline estimator never runs during policy execution.
#[derive(Debug)]
pub struct OfflineFilter {
    pub kind: OfflineFilterKind,
    calls: AtomicU64,
}

impl OfflineFilter {
    pub fn new(kind: OfflineFilterKind) -> Self {
        OfflineFilter {
            kind,
            calls: AtomicU64::new(0),
        }
    }

    pub fn central_difference() -> Self {
        OfflineFilter::new(OfflineFilterKind::CentralDifference)
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Position and velocity estimates at every sample `0..=T`. Entries
    /// outside the filter's valid range (the endpoints, for the central
    /// difference) are `None`.
    #[allow(clippy::type_complexity)]
    fn estimate(
        &self,
        traj: &Trajectory,
    ) -> Result<(Vec<Option<Vec<f64>>>, Vec<Option<Vec<f64>>>), DynamicsError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let t_len = traj.positions.rows();
        let d_q = traj.positions.cols();
        let ts = traj.ts();
        match &self.kind {
            OfflineFilterKind::CentralDifference => {
                let mut pos: Vec<Option<Vec<f64>>> = vec![None; t_len];
                let mut vel: Vec<Option<Vec<f64>>> = vec![None; t_len];
                for t in 1..t_len - 1 {
                    let mut v = vec![0.0; d_q];
                    for i in 0..d_q {
                        v[i] =
                            (traj.positions.at(t + 1, i) - traj.positions.at(t - 1, i)) / (2.0 * ts);
                    }
                    pos[t] = Some(traj.positions.row(t).to_vec());
                    vel[t] = Some(v);
                }
                Ok((pos, vel))
            }
            OfflineFilterKind::KalmanSmoother {
                process_intensity,
                meas_var,
                init_pos_var,
                init_vel_var,
            } => {
                let spec = KalmanSpec {
                    ts,
                    process_intensity: *process_intensity,
                    meas_var: *meas_var,
                    init_pos_var: *init_pos_var,
                    init_vel_var: *init_vel_var,
                };
                let mut pos: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; d_q]); t_len];
                let mut vel: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; d_q]); t_len];
                for i in 0..d_q {
                    let series: Vec<f64> = (0..t_len).map(|t| traj.positions.at(t, i)).collect();
                    let smoothed = kalman_smooth(&spec, &series)?;
                    for (t, pt) in smoothed.iter().enumerate() {
                        pos[t].as_mut().unwrap()[i] = pt.pos;
                        vel[t].as_mut().unwrap()[i] = pt.vel;
                    }
                }
                Ok((pos, vel))
            }
        }
    }
}

/// Model-ready training rows: inputs `n x d_xt`, one target column per
/// velocity component.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Mat,
    /// `n x d_q` velocity-change targets.
    pub targets: Mat,
    /// Control dimension recorded for bookkeeping.
    pub d_u: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn target_column(&self, i: usize) -> Vec<f64> {
        (0..self.targets.rows()).map(|r| self.targets.at(r, i)).collect()
    }
}

/// Builds GP training rows from trajectories: offline velocity estimates,
/// inputs `[encode(q_t, qdot_t), u_t]`, targets
/// `delta_t = qdot_{t+1} - qdot_t`. The first and last samples of each
/// trajectory are dropped (the central difference is undefined there), giving
/// `T - 2` rows per trajectory; multi-trajectory sets are concatenations with
/// no cross-trajectory differences.
pub fn build_training_set(
    trajs: &[Trajectory],
    encoder: &StateEncoder,
    filter: &OfflineFilter,
) -> Result<TrainingSet, DynamicsError> {
    let mut input_rows: Vec<Vec<f64>> = Vec::new();
    let mut target_rows: Vec<Vec<f64>> = Vec::new();
    let mut d_u = 0;
    for traj in trajs {
        let t_steps = traj.steps();
        if t_steps < 3 {
            return Err(DynamicsError::TrajectoryTooShort { steps: t_steps });
        }
        if traj.positions.cols() != encoder.dim_q() {
            return Err(DynamicsError::DimensionMismatch {
                expected: encoder.dim_q(),
                got: traj.positions.cols(),
            });
        }
        d_u = traj.controls.cols();
        let (pos_est, vel_est) = filter.estimate(traj)?;
        let mut enc = Vec::with_capacity(encoder.encoded_dim());
        for t in 1..=t_steps - 2 {
            let (Some(p), Some(v), Some(v_next)) = (&pos_est[t], &vel_est[t], &vel_est[t + 1])
            else {
                continue;
            };
            encoder.encode_into(p, v, &mut enc);
            let mut row = enc.clone();
            row.extend_from_slice(traj.controls.row(t));
            input_rows.push(row);
            target_rows.push(v_next.iter().zip(v).map(|(n, c)| n - c).collect());
        }
    }
    if input_rows.is_empty() {
        return Err(DynamicsError::EmptyTrainingSet);
    }
    Ok(TrainingSet {
        inputs: Mat::from_rows(&input_rows),
        targets: Mat::from_rows(&target_rows),
        d_u,
    })
}

/// Constant-acceleration integration of one step with an injected velocity
/// change.
pub fn integrate_delta(q: f64, qdot: f64, delta: f64, ts: f64) -> (f64, f64) {
    (q + ts * qdot + 0.5 * ts * delta, qdot + delta)
}

/// One-step-ahead model: one fitted GP per velocity component plus the
/// integration scheme. All GPs share the sampling time and the input map.
pub struct DeltaModel {
    gps: Vec<Arc<GpModel>>,
    ts: f64,
    encoder: StateEncoder,
}

impl DeltaModel {
    pub fn new(gps: Vec<Arc<GpModel>>, ts: f64, encoder: StateEncoder) -> Self {
        assert!(ts > 0.0);
        assert_eq!(gps.len(), encoder.dim_q(), "one GP per velocity component");
        let expected = gps[0].input_dim();
        for gp in &gps {
            assert_eq!(gp.input_dim(), expected, "GPs must share the input map");
        }
        assert!(expected > encoder.encoded_dim(), "inputs must include the control");
        DeltaModel { gps, ts, encoder }
    }

    /// Fits one GP per velocity component on a training set, with
    /// marginal-likelihood hyperparameter optimization. `warm_start` supplies
    /// per-component hyperparameter vectors from a previous fit.
    pub fn train(
        choice: KernelChoice,
        ts: f64,
        encoder: StateEncoder,
        set: &TrainingSet,
        opt_iters: usize,
        learning_rate: f64,
        warm_start: Option<&[Vec<f64>]>,
    ) -> Result<(Self, Vec<HyperOptReport>), DynamicsError> {
        if set.is_empty() {
            return Err(DynamicsError::EmptyTrainingSet);
        }
        let d_q = encoder.dim_q();
        assert_eq!(set.targets.cols(), d_q);
        let mut gps = Vec::with_capacity(d_q);
        let mut reports = Vec::with_capacity(d_q);
        for i in 0..d_q {
            let targets = set.target_column(i);
            let mut gp = crate::gp::data_init_model(&choice, set.inputs.clone(), targets);
            if let Some(warm) = warm_start {
                if warm[i].len() == gp.hyper_params().len() {
                    gp.set_hyper_params(&warm[i]);
                }
            }
            gp.fit()?;
            let report = gp.optimize_hyperparameters(opt_iters, learning_rate)?;
            reports.push(report);
            gps.push(Arc::new(gp));
        }
        Ok((DeltaModel::new(gps, ts, encoder), reports))
    }

    pub fn gps(&self) -> &[Arc<GpModel>] {
        &self.gps
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn dim_q(&self) -> usize {
        self.encoder.dim_q()
    }

    pub fn dim_u(&self) -> usize {
        self.gps[0].input_dim() - self.encoder.encoded_dim()
    }

    pub fn make_input(&self, state: &State, u: &[f64]) -> Vec<f64> {
        let mut x = self.encoder.encode(state);
        x.extend_from_slice(u);
        x
    }

    /// One model step: sample each velocity change from its GP posterior with
    /// the supplied standard-normal draws, then integrate.
    pub fn predict_step(
        &self,
        state: &State,
        u: &[f64],
        eps: &[f64],
    ) -> Result<State, DynamicsError> {
        let x = self.make_input(state, u);
        let d_q = self.dim_q();
        let mut q = vec![0.0; d_q];
        let mut qdot = vec![0.0; d_q];
        for i in 0..d_q {
            let delta = self.gps[i].sample_posterior(&x, eps[i])?;
            let (qn, vn) = integrate_delta(state.q[i], state.qdot[i], delta, self.ts);
            q[i] = qn;
            qdot[i] = vn;
        }
        let next = State::new(q, qdot);
        if !next.is_finite() {
            return Err(DynamicsError::NonFinite { step: 0 });
        }
        Ok(next)
    }

    /// Registers the per-component posterior-sampling ops on a tape; the
    /// returned handles feed [`DeltaModel::predict_step_var`].
    pub fn register_ops(&self, tape: &Tape) -> Result<Vec<OpId>, DynamicsError> {
        self.gps
            .iter()
            .map(|gp| Ok(GpSampleOp::new(gp.clone())?.register(tape)))
            .collect()
    }

    /// Tape twin of [`DeltaModel::predict_step`]; differentiable with respect
    /// to the state, the control, and anything upstream of them.
    pub fn predict_step_var<'t>(
        &self,
        tape: &'t Tape,
        ops: &[OpId],
        state: &VarState<'t>,
        u: &[Var<'t>],
        eps: &[f64],
    ) -> VarState<'t> {
        let mut x = self.encoder.encode_var(&state.q, &state.qdot);
        x.extend_from_slice(u);
        let d_q = self.dim_q();
        let mut q = Vec::with_capacity(d_q);
        let mut qdot = Vec::with_capacity(d_q);
        let half_ts = 0.5 * self.ts;
        for i in 0..d_q {
            let delta = tape.custom(ops[i], &x, eps[i]);
            q.push(state.q[i] + state.qdot[i] * self.ts + delta * half_ts);
            qdot.push(state.qdot[i] + delta);
        }
        VarState { q, qdot }
    }

    /// Iterated `predict_step` under a fixed control sequence; returns
    /// `T + 1` states. Per-step draws come from child streams of `seed`.
    pub fn rollout_open_loop(
        &self,
        initial: &State,
        controls: &Mat,
        seed: &Seed,
    ) -> Result<Vec<State>, DynamicsError> {
        let mut states = Vec::with_capacity(controls.rows() + 1);
        states.push(initial.clone());
        let mut eps = vec![0.0; self.dim_q()];
        for t in 0..controls.rows() {
            let mut rng = seed.child(t as u64).rng();
            rng.fill_normal(&mut eps);
            let next = self
                .predict_step(states.last().unwrap(), controls.row(t), &eps)
                .map_err(|e| match e {
                    DynamicsError::NonFinite { .. } => DynamicsError::NonFinite { step: t },
                    other => other,
                })?;
            states.push(next);
        }
        Ok(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Kernel, SeKernel};

    fn traj_from_q(q: &[f64], ts: f64) -> Trajectory {
        let t_steps = q.len() - 1;
        Trajectory::new(
            (0..q.len()).map(|t| ts * t as f64).collect(),
            Mat::from_rows(&q.iter().map(|&v| vec![v]).collect::<Vec<_>>()),
            Mat::zeros(t_steps, 1),
        )
        .unwrap()
    }

    #[test]
    fn central_difference_hand_example() {
        let traj = traj_from_q(&[0.0, 1.0, 4.0, 9.0], 1.0);
        let set = build_training_set(
            &[traj],
            &StateEncoder::plain(1),
            &OfflineFilter::central_difference(),
        )
        .unwrap();
        assert_eq!(set.len(), 1); // T - 2 rows
        // qdot_1 = (4-0)/2 = 2; input row = [q_1, qdot_1, u_1]
        assert_eq!(set.inputs.row(0), &[1.0, 2.0, 0.0]);
        // Delta_1 = qdot_2 - qdot_1 = 4 - 2 = 2
        assert_eq!(set.targets.at(0, 0), 2.0);
    }

    #[test]
    fn constant_positions_give_zero_targets() {
        let traj = traj_from_q(&[0.5; 8], 0.1);
        let set = build_training_set(
            &[traj],
            &StateEncoder::plain(1),
            &OfflineFilter::central_difference(),
        )
        .unwrap();
        assert_eq!(set.len(), 5);
        for r in 0..set.len() {
            assert_eq!(set.inputs.at(r, 1), 0.0); // velocity estimate
            assert_eq!(set.targets.at(r, 0), 0.0);
        }
    }

    #[test]
    fn central_difference_exact_on_quadratic() {
        // q(t) = t^2 sampled at Ts = 0.1; central differences of quadratics
        // are exact: qdot(t) = 2 t at interior points.
        let ts = 0.1;
        let q: Vec<f64> = (0..30).map(|t| (ts * t as f64) * (ts * t as f64)).collect();
        let traj = traj_from_q(&q, ts);
        let set = build_training_set(
            &[traj],
            &StateEncoder::plain(1),
            &OfflineFilter::central_difference(),
        )
        .unwrap();
        for r in 0..set.len() {
            let t = (r + 1) as f64 * ts;
            assert!((set.inputs.at(r, 1) - 2.0 * t).abs() < 1e-9, "row {r}");
        }
    }

    #[test]
    fn estimator_is_acausal() {
        // changing q_{t+1} must change the velocity estimate at t
        let base = traj_from_q(&[0.0, 1.0, 4.0, 9.0], 1.0);
        let mut bumped_q = vec![0.0, 1.0, 4.0, 9.0];
        bumped_q[2] += 0.5; // q at t=2 feeds the estimate at t=1
        let bumped = traj_from_q(&bumped_q, 1.0);
        let enc = StateEncoder::plain(1);
        let filt = OfflineFilter::central_difference();
        let a = build_training_set(&[base], &enc, &filt).unwrap();
        let b = build_training_set(&[bumped], &enc, &filt).unwrap();
        assert_ne!(a.inputs.at(0, 1), b.inputs.at(0, 1));
    }

    #[test]
    fn smoother_filter_produces_full_rows() {
        let ts = 1.0 / 30.0;
        let q: Vec<f64> = (0..40).map(|t| 0.7 * ts * t as f64).collect();
        let traj = traj_from_q(&q, ts);
        let set = build_training_set(
            &[traj],
            &StateEncoder::plain(1),
            &OfflineFilter::new(OfflineFilterKind::KalmanSmoother {
                process_intensity: 1.0,
                meas_var: 1e-6,
                init_pos_var: 1.0,
                init_vel_var: 1.0,
            }),
        )
        .unwrap();
        assert_eq!(set.len(), 37);
        // on a noiseless ramp the smoothed velocity is ~exact away from t=0
        for r in 5..set.len() {
            assert!((set.inputs.at(r, 1) - 0.7).abs() < 1e-3, "row {r}: {}", set.inputs.at(r, 1));
        }
    }

    #[test]
    fn too_short_trajectory_rejected() {
        let traj = traj_from_q(&[0.0, 1.0, 2.0], 1.0);
        assert!(matches!(
            build_training_set(
                &[traj],
                &StateEncoder::plain(1),
                &OfflineFilter::central_difference()
            ),
            Err(DynamicsError::TrajectoryTooShort { steps: 2 })
        ));
    }

    #[test]
    fn non_uniform_spacing_rejected() {
        let r = Trajectory::new(
            vec![0.0, 0.1, 0.25, 0.3],
            Mat::zeros(4, 1),
            Mat::zeros(3, 1),
        );
        assert!(matches!(r, Err(DynamicsError::NonUniformSpacing { index: 2 })));
    }

    #[test]
    fn encoder_layout_matches_convention() {
        // cart-pole: q = [p, theta] with theta an angle
        let enc = StateEncoder::new(vec![false, true]);
        assert_eq!(enc.encoded_dim(), 5);
        let s = State::new(vec![0.3, core::f64::consts::FRAC_PI_2], vec![1.0, 2.0]);
        let x = enc.encode(&s);
        assert_eq!(x.len(), 5);
        assert_eq!(x[0], 0.3); // p
        assert_eq!(x[1], 1.0); // pdot
        assert_eq!(x[2], 2.0); // thetadot
        assert!((x[3] - 1.0).abs() < 1e-12); // sin(theta)
        assert!(x[4].abs() < 1e-12); // cos(theta)
    }

    #[test]
    fn integrate_delta_hand_values() {
        // pure drift
        let (q, v) = integrate_delta(0.0, 1.0, 0.0, 0.1);
        assert_eq!((q, v), (0.1, 1.0));
        // injected velocity change
        let (q, v) = integrate_delta(0.0, 1.0, 0.5, 0.1);
        assert!((q - 0.125).abs() < 1e-15);
        assert!((v - 1.5).abs() < 1e-15);
    }

    #[test]
    fn doubling_ts_doubles_position_increment() {
        let (q1, _) = integrate_delta(0.0, 1.3, 0.4, 0.1);
        let (q2, _) = integrate_delta(0.0, 1.3, 0.4, 0.2);
        assert!((q2 - 2.0 * q1).abs() < 1e-15);
    }

    fn zero_target_model(ts: f64) -> DeltaModel {
        // alpha = 0 for zero targets, so sampled deltas at eps = 0 vanish
        let inputs = Mat::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.5, 0.2],
            vec![-1.0, -0.5, -0.2],
        ]);
        let mut gp = GpModel::new(
            Kernel::Se(SeKernel::new(1.0, &[1.0, 1.0, 1.0])),
            1e-4,
            inputs,
            vec![0.0; 3],
        );
        gp.fit().unwrap();
        DeltaModel::new(vec![Arc::new(gp)], ts, StateEncoder::plain(1))
    }

    #[test]
    fn predict_step_with_zero_delta_is_pure_drift() {
        let model = zero_target_model(0.1);
        let s = State::new(vec![0.0], vec![1.0]);
        let next = model.predict_step(&s, &[0.0], &[0.0]).unwrap();
        assert!((next.q[0] - 0.1).abs() < 1e-12);
        assert!((next.qdot[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_step_gradient_wrt_velocity_is_ts() {
        // with zero-mean posterior and eps = 0 the delta contributes nothing,
        // so d q_next / d qdot = Ts exactly
        let model = zero_target_model(0.1);
        let tape = Tape::new();
        let ops = model.register_ops(&tape).unwrap();
        let q = tape.vars(&[0.0]);
        let qdot = tape.vars(&[1.0]);
        let u = tape.vars(&[0.0]);
        let st = VarState {
            q: q.clone(),
            qdot: qdot.clone(),
        };
        let next = model.predict_step_var(&tape, &ops, &st, &u, &[0.0]);
        let g = tape.reverse(next.q[0]);
        assert_eq!(g.wrt(qdot[0]), 0.1);
    }

    #[test]
    fn open_loop_rollout_basics() {
        let model = zero_target_model(0.1);
        let init = State::new(vec![0.0], vec![1.0]);
        // T = 0 returns only the initial state
        let states = model
            .rollout_open_loop(&init, &Mat::zeros(0, 1), &Seed::new(1))
            .unwrap();
        assert_eq!(states.len(), 1);
        // determinism
        let a = model
            .rollout_open_loop(&init, &Mat::zeros(10, 1), &Seed::new(2))
            .unwrap();
        let b = model
            .rollout_open_loop(&init, &Mat::zeros(10, 1), &Seed::new(2))
            .unwrap();
        assert_eq!(a, b);
        let c = model
            .rollout_open_loop(&init, &Mat::zeros(10, 1), &Seed::new(3))
            .unwrap();
        assert_ne!(a, c);
    }
}
