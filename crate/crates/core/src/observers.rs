//! The measurement system and the online/offline state observers.
//!
//! Measured positions are the true positions corrupted by i.i.d. Gaussian
//! noise. Velocities are never measured; an [`ObserverChain`] reconstructs
//! them causally (finite differences, first-order low-pass, per-coordinate
//! constant-velocity Kalman filter), while the offline Kalman smoother
//! provides the acausal estimates used to build training data.
//!
//! Every chain stage is linear or smooth in the measurements, so gradients
//! flow through the chain when it runs inside a differentiable rollout. The
//! Kalman gain sequence depends only on covariances, never on data, so the
//! covariance recursion stays in plain `f64` even on the tape.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::diff::Var;

#[derive(Debug, Clone, PartialEq)]
pub enum ObserverError {
    AlphaOutOfRange(f64),
    TooFewMeasurements(usize),
    NonSpdCovariance,
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for ObserverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObserverError::AlphaOutOfRange(a) => {
                write!(f, "low-pass coefficient {a} must lie in (0, 1]")
            }
            ObserverError::TooFewMeasurements(n) => {
                write!(f, "smoother needs at least 2 measurements, got {n}")
            }
            ObserverError::NonSpdCovariance => write!(f, "covariance lost positive definiteness"),
            ObserverError::DimensionMismatch { expected, got } => {
                write!(f, "expected {expected} coordinates, got {got}")
            }
        }
    }
}

/// Gaussian position-measurement noise, one standard deviation per
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub noise_std: Vec<f64>,
}

impl MeasurementModel {
    pub fn new(noise_std: Vec<f64>) -> Self {
        assert!(noise_std.iter().all(|s| *s >= 0.0), "negative noise std");
        MeasurementModel { noise_std }
    }

    pub fn noiseless(dim: usize) -> Self {
        MeasurementModel {
            noise_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.noise_std.len()
    }

    /// `qbar = q + sigma .* eps`.
    pub fn measure(&self, q: &[f64], eps: &[f64], out: &mut [f64]) {
        for i in 0..q.len() {
            out[i] = q[i] + self.noise_std[i] * eps[i];
        }
    }

    /// Tape version; the draw is a constant offset, so `d qbar / d q = I`.
    pub fn measure_var<'t>(&self, q: &[Var<'t>], eps: &[f64]) -> Vec<Var<'t>> {
        q.iter()
            .zip(eps)
            .zip(&self.noise_std)
            .map(|((&qi, &e), &s)| qi + s * e)
            .collect()
    }
}

/// Causal backward difference `(q_t - q_{t-1}) / Ts`.
pub fn causal_difference(current: f64, previous: f64, ts: f64) -> f64 {
    (current - previous) / ts
}

/// First-order IIR low-pass `z_t = alpha raw + (1 - alpha) z_{t-1}`.
pub fn low_pass_first_order(raw: f64, previous: f64, alpha: f64) -> f64 {
    alpha * raw + (1.0 - alpha) * previous
}

/// Per-coordinate constant-velocity model for Kalman filtering/smoothing:
/// state `[position, velocity]`, transition `[[1, Ts], [0, 1]]`, measurement
/// of position only. The process noise is the continuous white-acceleration
/// discretization `intensity * [[Ts^3/3, Ts^2/2], [Ts^2/2, Ts]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanSpec {
    pub ts: f64,
    pub process_intensity: f64,
    pub meas_var: f64,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
}

impl KalmanSpec {
    fn q(&self) -> Cov {
        let ts = self.ts;
        let q = self.process_intensity;
        [
            [q * ts * ts * ts / 3.0, q * ts * ts / 2.0],
            [q * ts * ts / 2.0, q * ts],
        ]
    }

    fn init_cov(&self) -> Cov {
        [[self.init_pos_var, 0.0], [0.0, self.init_vel_var]]
    }
}

type Cov = [[f64; 2]; 2];

fn symmetrize(p: &mut Cov) {
    let off = 0.5 * (p[0][1] + p[1][0]);
    p[0][1] = off;
    p[1][0] = off;
}

fn spd_ok(p: &Cov) -> bool {
    let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    p[0][0] > 0.0 && p[1][1] > 0.0 && det > -1e-12 * (p[0][0] * p[1][1]) && det.is_finite()
}

/// Covariance half of one predict/update cycle; returns the Kalman gain.
/// Shared by the filter and by the tape path, where gains are constants.
fn cov_predict_update(spec: &KalmanSpec, cov: &mut Cov) -> Result<[f64; 2], ObserverError> {
    let ts = spec.ts;
    let q = spec.q();
    // P <- F P F^T + Q
    let p00 = cov[0][0] + ts * (cov[1][0] + cov[0][1]) + ts * ts * cov[1][1] + q[0][0];
    let p01 = cov[0][1] + ts * cov[1][1] + q[0][1];
    let p11 = cov[1][1] + q[1][1];
    let s = p00 + spec.meas_var;
    if !(s > 0.0) {
        return Err(ObserverError::NonSpdCovariance);
    }
    let gain = [p00 / s, p01 / s];
    cov[0][0] = p00 - gain[0] * p00;
    cov[0][1] = p01 - gain[0] * p01;
    cov[1][0] = p01 - gain[1] * p00;
    cov[1][1] = p11 - gain[1] * p01;
    symmetrize(cov);
    if !spd_ok(cov) {
        return Err(ObserverError::NonSpdCovariance);
    }
    Ok(gain)
}

/// One predict/update step of the constant-velocity filter.
pub fn kalman_filter_step(
    spec: &KalmanSpec,
    state: &mut [f64; 2],
    cov: &mut Cov,
    measurement: f64,
) -> Result<(), ObserverError> {
    let pred = [state[0] + spec.ts * state[1], state[1]];
    let gain = cov_predict_update(spec, cov)?;
    let innovation = measurement - pred[0];
    state[0] = pred[0] + gain[0] * innovation;
    state[1] = pred[1] + gain[1] * innovation;
    Ok(())
}

/// One smoothed point: position/velocity estimate and covariance.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedPoint {
    pub pos: f64,
    pub vel: f64,
    pub cov: Cov,
}

/// Forward Kalman filter followed by the backward Rauch-Tung-Striebel
/// recursion over one scalar position sequence.
pub fn kalman_smooth(
    spec: &KalmanSpec,
    measurements: &[f64],
) -> Result<Vec<SmoothedPoint>, ObserverError> {
    let t_len = measurements.len();
    if t_len < 2 {
        return Err(ObserverError::TooFewMeasurements(t_len));
    }
    let ts = spec.ts;
    let q = spec.q();

    let mut filt_x = vec![[0.0f64; 2]; t_len];
    let mut filt_p = vec![[[0.0f64; 2]; 2]; t_len];
    let mut pred_x = vec![[0.0f64; 2]; t_len];
    let mut pred_p = vec![[[0.0f64; 2]; 2]; t_len];

    // prior at t = 0 centered on the first measurement, zero velocity
    pred_x[0] = [measurements[0], 0.0];
    pred_p[0] = spec.init_cov();

    for t in 0..t_len {
        if t > 0 {
            let xp = &filt_x[t - 1];
            pred_x[t] = [xp[0] + ts * xp[1], xp[1]];
            let p = &filt_p[t - 1];
            pred_p[t] = [
                [
                    p[0][0] + ts * (p[1][0] + p[0][1]) + ts * ts * p[1][1] + q[0][0],
                    p[0][1] + ts * p[1][1] + q[0][1],
                ],
                [p[1][0] + ts * p[1][1] + q[1][0], p[1][1] + q[1][1]],
            ];
            symmetrize(&mut pred_p[t]);
        }
        let s = pred_p[t][0][0] + spec.meas_var;
        if !(s > 0.0) {
            return Err(ObserverError::NonSpdCovariance);
        }
        let gain = [pred_p[t][0][0] / s, pred_p[t][1][0] / s];
        let innovation = measurements[t] - pred_x[t][0];
        filt_x[t] = [
            pred_x[t][0] + gain[0] * innovation,
            pred_x[t][1] + gain[1] * innovation,
        ];
        let pp = pred_p[t];
        filt_p[t] = [
            [pp[0][0] - gain[0] * pp[0][0], pp[0][1] - gain[0] * pp[0][1]],
            [pp[1][0] - gain[1] * pp[0][0], pp[1][1] - gain[1] * pp[0][1]],
        ];
        symmetrize(&mut filt_p[t]);
        if !spd_ok(&filt_p[t]) {
            return Err(ObserverError::NonSpdCovariance);
        }
    }

    let mut out = vec![
        SmoothedPoint {
            pos: 0.0,
            vel: 0.0,
            cov: [[0.0; 2]; 2]
        };
        t_len
    ];
    let last = t_len - 1;
    out[last] = SmoothedPoint {
        pos: filt_x[last][0],
        vel: filt_x[last][1],
        cov: filt_p[last],
    };
    let mut sx = filt_x[last];
    let mut sp = filt_p[last];
    for t in (0..last).rev() {
        let p = &filt_p[t];
        // C = P_t F^T (P^-_{t+1})^{-1}
        let pf = [
            [p[0][0] + ts * p[0][1], p[0][1]],
            [p[1][0] + ts * p[1][1], p[1][1]],
        ];
        let pn = &pred_p[t + 1];
        let det = pn[0][0] * pn[1][1] - pn[0][1] * pn[1][0];
        if det.abs() < 1e-300 {
            return Err(ObserverError::NonSpdCovariance);
        }
        let inv = [
            [pn[1][1] / det, -pn[0][1] / det],
            [-pn[1][0] / det, pn[0][0] / det],
        ];
        let c = [
            [
                pf[0][0] * inv[0][0] + pf[0][1] * inv[1][0],
                pf[0][0] * inv[0][1] + pf[0][1] * inv[1][1],
            ],
            [
                pf[1][0] * inv[0][0] + pf[1][1] * inv[1][0],
                pf[1][0] * inv[0][1] + pf[1][1] * inv[1][1],
            ],
        ];
        let dx = [sx[0] - pred_x[t + 1][0], sx[1] - pred_x[t + 1][1]];
        sx = [
            filt_x[t][0] + c[0][0] * dx[0] + c[0][1] * dx[1],
            filt_x[t][1] + c[1][0] * dx[0] + c[1][1] * dx[1],
        ];
        // P^s_t = P_t + C (P^s_{t+1} - P^-_{t+1}) C^T
        let dp = [
            [sp[0][0] - pn[0][0], sp[0][1] - pn[0][1]],
            [sp[1][0] - pn[1][0], sp[1][1] - pn[1][1]],
        ];
        let cdp = [
            [
                c[0][0] * dp[0][0] + c[0][1] * dp[1][0],
                c[0][0] * dp[0][1] + c[0][1] * dp[1][1],
            ],
            [
                c[1][0] * dp[0][0] + c[1][1] * dp[1][0],
                c[1][0] * dp[0][1] + c[1][1] * dp[1][1],
            ],
        ];
        sp = [
            [
                p[0][0] + cdp[0][0] * c[0][0] + cdp[0][1] * c[0][1],
                p[0][1] + cdp[0][0] * c[1][0] + cdp[0][1] * c[1][1],
            ],
            [
                p[1][0] + cdp[1][0] * c[0][0] + cdp[1][1] * c[0][1],
                p[1][1] + cdp[1][0] * c[1][0] + cdp[1][1] * c[1][1],
            ],
        ];
        symmetrize(&mut sp);
        out[t] = SmoothedPoint {
            pos: sx[0],
            vel: sx[1],
            cov: sp,
        };
    }
    Ok(out)
}

/// One stage of the online observer.
#[derive(Debug, Clone, PartialEq)]
pub enum ObserverStage {
    /// Velocity from the backward difference of measured positions
    /// (memory: one past measurement).
    CausalDiff,
    /// First-order low-pass on the velocity estimate
    /// (memory: one past output).
    LowPass { alpha: f64 },
    /// Per-coordinate constant-velocity Kalman filter re-estimating both
    /// position and velocity.
    KalmanFilter(KalmanSpec),
    /// Degenerate stage that substitutes the simulator's true velocities;
    /// used to collapse the observed-state pipeline onto the full-state one
    /// in equivalence tests.
    PassThroughTrueVelocity,
}

/// Ordered causal filter bank turning measured positions into an observed
/// state (positions + velocity estimates).
#[derive(Debug)]
pub struct ObserverChain {
    pub ts: f64,
    stages: Vec<ObserverStage>,
    calls: AtomicU64,
}

impl Clone for ObserverChain {
    fn clone(&self) -> Self {
        ObserverChain {
            ts: self.ts,
            stages: self.stages.clone(),
            calls: AtomicU64::new(0),
        }
    }
}

impl ObserverChain {
    pub fn new(ts: f64, stages: Vec<ObserverStage>) -> Result<Self, ObserverError> {
        assert!(ts > 0.0);
        for s in &stages {
            if let ObserverStage::LowPass { alpha } = s {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(ObserverError::AlphaOutOfRange(*alpha));
                }
            }
        }
        Ok(ObserverChain {
            ts,
            stages,
            calls: AtomicU64::new(0),
        })
    }

    pub fn stages(&self) -> &[ObserverStage] {
        &self.stages
    }

    /// Measurement / output memory depths `(m_q, m_z)` implied by the stages.
    pub fn memory_depths(&self) -> (usize, usize) {
        let m_q = if self
            .stages
            .iter()
            .any(|s| matches!(s, ObserverStage::CausalDiff))
        {
            1
        } else {
            0
        };
        let m_z = if self.stages.iter().any(|s| {
            matches!(
                s,
                ObserverStage::LowPass { .. } | ObserverStage::KalmanFilter(_)
            )
        }) {
            1
        } else {
            0
        };
        (m_q, m_z)
    }

    /// Times `observe`/`observe_var` ran; phase-isolation instrumentation.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_call_count(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Per-particle memory at the start of a rollout: buffers filled with the
    /// initial measured position, velocity estimates zero.
    pub fn init_state(&self, qbar0: &[f64]) -> ChainState {
        let d = qbar0.len();
        ChainState {
            prev_meas: qbar0.to_vec(),
            prev_vel: vec![0.0; d],
            kf_state: qbar0.iter().map(|&p| [p, 0.0]).collect(),
            kf_cov: self
                .stages
                .iter()
                .find_map(|s| match s {
                    ObserverStage::KalmanFilter(spec) => Some(vec![spec.init_cov(); d]),
                    _ => None,
                })
                .unwrap_or_else(|| vec![[[0.0; 2]; 2]; d]),
            step: 0,
        }
    }

    /// Applies the chain to the measurement at the current step. `true_qdot`
    /// feeds only the pass-through stage.
    pub fn observe(
        &self,
        state: &mut ChainState,
        qbar: &[f64],
        true_qdot: Option<&[f64]>,
    ) -> Result<ObservedState, ObserverError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let d = qbar.len();
        if state.prev_meas.len() != d {
            return Err(ObserverError::DimensionMismatch {
                expected: state.prev_meas.len(),
                got: d,
            });
        }
        let mut pos = qbar.to_vec();
        let mut vel = state.prev_vel.clone();
        for stage in &self.stages {
            match stage {
                ObserverStage::CausalDiff => {
                    for i in 0..d {
                        vel[i] = causal_difference(qbar[i], state.prev_meas[i], self.ts);
                    }
                }
                ObserverStage::LowPass { alpha } => {
                    // z_0 = first raw sample
                    if state.step > 0 {
                        for i in 0..d {
                            vel[i] = low_pass_first_order(vel[i], state.prev_vel[i], *alpha);
                        }
                    }
                }
                ObserverStage::KalmanFilter(spec) => {
                    for i in 0..d {
                        kalman_filter_step(
                            spec,
                            &mut state.kf_state[i],
                            &mut state.kf_cov[i],
                            qbar[i],
                        )?;
                        pos[i] = state.kf_state[i][0];
                        vel[i] = state.kf_state[i][1];
                    }
                }
                ObserverStage::PassThroughTrueVelocity => {
                    let tv = true_qdot.expect("pass-through stage needs true velocities");
                    vel.copy_from_slice(tv);
                }
            }
        }
        state.prev_meas.copy_from_slice(qbar);
        state.prev_vel.copy_from_slice(&vel);
        state.step += 1;
        Ok(ObservedState { pos, vel })
    }

    pub fn init_state_var<'t>(&self, qbar0: &[Var<'t>]) -> ChainStateVar<'t> {
        let zero: Vec<Var<'t>> = qbar0.iter().map(|&v| v * 0.0).collect();
        ChainStateVar {
            prev_meas: qbar0.to_vec(),
            prev_vel: zero.clone(),
            kf_state: qbar0.iter().zip(&zero).map(|(&p, &z)| [p, z]).collect(),
            kf_cov: self
                .stages
                .iter()
                .find_map(|s| match s {
                    ObserverStage::KalmanFilter(spec) => Some(vec![spec.init_cov(); qbar0.len()]),
                    _ => None,
                })
                .unwrap_or_else(|| vec![[[0.0; 2]; 2]; qbar0.len()]),
            step: 0,
        }
    }

    /// Tape twin of [`ObserverChain::observe`].
    pub fn observe_var<'t>(
        &self,
        state: &mut ChainStateVar<'t>,
        qbar: &[Var<'t>],
        true_qdot: Option<&[Var<'t>]>,
    ) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>), ObserverError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let d = qbar.len();
        let mut pos = qbar.to_vec();
        let mut vel = state.prev_vel.clone();
        for stage in &self.stages {
            match stage {
                ObserverStage::CausalDiff => {
                    for i in 0..d {
                        vel[i] = (qbar[i] - state.prev_meas[i]) * (1.0 / self.ts);
                    }
                }
                ObserverStage::LowPass { alpha } => {
                    if state.step > 0 {
                        for i in 0..d {
                            vel[i] = vel[i] * *alpha + state.prev_vel[i] * (1.0 - *alpha);
                        }
                    }
                }
                ObserverStage::KalmanFilter(spec) => {
                    for i in 0..d {
                        let gain = cov_predict_update(spec, &mut state.kf_cov[i])?;
                        let pred_pos = state.kf_state[i][0] + state.kf_state[i][1] * spec.ts;
                        let pred_vel = state.kf_state[i][1];
                        let innovation = qbar[i] - pred_pos;
                        state.kf_state[i][0] = pred_pos + innovation * gain[0];
                        state.kf_state[i][1] = pred_vel + innovation * gain[1];
                        pos[i] = state.kf_state[i][0];
                        vel[i] = state.kf_state[i][1];
                    }
                }
                ObserverStage::PassThroughTrueVelocity => {
                    let tv = true_qdot.expect("pass-through stage needs true velocities");
                    vel = tv.to_vec();
                }
            }
        }
        state.prev_meas = qbar.to_vec();
        state.prev_vel = vel.clone();
        state.step += 1;
        Ok((pos, vel))
    }
}

/// Per-particle online observer memory (plain execution).
#[derive(Debug, Clone)]
pub struct ChainState {
    prev_meas: Vec<f64>,
    prev_vel: Vec<f64>,
    kf_state: Vec<[f64; 2]>,
    kf_cov: Vec<Cov>,
    step: usize,
}

impl ChainState {
    pub fn prev_measurement(&self) -> &[f64] {
        &self.prev_meas
    }
}

/// Per-particle online observer memory inside a differentiable rollout. The
/// covariances stay plain floats: Kalman gains are data-independent.
pub struct ChainStateVar<'t> {
    prev_meas: Vec<Var<'t>>,
    prev_vel: Vec<Var<'t>>,
    kf_state: Vec<[Var<'t>; 2]>,
    kf_cov: Vec<Cov>,
    step: usize,
}

impl<'t> ChainStateVar<'t> {
    pub fn prev_measurement(&self) -> &[Var<'t>] {
        &self.prev_meas
    }
}

/// Positions and velocity estimates produced by the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedState {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;
    use crate::rng::Seed;

    #[test]
    fn measure_noiseless_is_identity() {
        let mm = MeasurementModel::noiseless(2);
        let mut out = [0.0; 2];
        mm.measure(&[1.0, -2.0], &[0.3, 0.7], &mut out);
        assert_eq!(out, [1.0, -2.0]);
    }

    #[test]
    fn measure_noise_std_matches_configured_value() {
        let mm = MeasurementModel::new(vec![3e-3]);
        let mut rng = Seed::new(2).rng();
        let n = 100_000;
        let mut acc = 0.0;
        let mut out = [0.0];
        for _ in 0..n {
            mm.measure(&[0.5], &[rng.normal()], &mut out);
            let d = out[0] - 0.5;
            acc += d * d;
        }
        let emp = (acc / n as f64).sqrt();
        assert!((emp / 3e-3 - 1.0).abs() < 0.02, "{emp}");
    }

    #[test]
    fn measure_gradient_is_identity() {
        let mm = MeasurementModel::new(vec![0.1, 0.2]);
        let tape = Tape::new();
        let q = tape.vars(&[1.0, 2.0]);
        let qbar = mm.measure_var(&q, &[0.4, -0.9]);
        let g = tape.reverse(qbar[0]);
        assert_eq!(g.wrt(q[0]), 1.0);
        assert_eq!(g.wrt(q[1]), 0.0);
    }

    #[test]
    fn causal_difference_hand_values() {
        assert!((causal_difference(0.1, 0.0, 0.1) - 1.0).abs() < 1e-12);
        assert_eq!(causal_difference(0.5, 0.5, 0.1), 0.0);
    }

    #[test]
    fn causal_difference_ramp_is_exact_from_second_step() {
        let ts = 0.05;
        let v = 2.4;
        let chain = ObserverChain::new(ts, vec![ObserverStage::CausalDiff]).unwrap();
        let mut st = chain.init_state(&[0.0]);
        for t in 0..20 {
            let q = v * ts * t as f64;
            let obs = chain.observe(&mut st, &[q], None).unwrap();
            if t >= 1 {
                assert!((obs.vel[0] - v).abs() < 1e-12, "t={t}");
            } else {
                assert_eq!(obs.vel[0], 0.0);
            }
        }
    }

    #[test]
    fn low_pass_alpha_one_is_identity() {
        assert_eq!(low_pass_first_order(3.7, -100.0, 1.0), 3.7);
    }

    #[test]
    fn low_pass_step_response() {
        // z0 = first raw sample = 0, then raw jumps to 1: 0.5, 0.75, 0.875 ...
        let mut z = 0.0;
        let mut seq = Vec::new();
        for _ in 0..3 {
            z = low_pass_first_order(1.0, z, 0.5);
            seq.push(z);
        }
        assert_eq!(seq, vec![0.5, 0.75, 0.875]);
    }

    #[test]
    fn low_pass_geometric_decay_to_constant() {
        let c = 2.0;
        let alpha = 0.3;
        let mut z = 0.0;
        for t in 1..=30 {
            z = low_pass_first_order(c, z, alpha);
            let expect = crate::fmath::powi(1.0 - alpha, t) * c;
            assert!(((c - z) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        assert!(matches!(
            ObserverChain::new(0.1, vec![ObserverStage::LowPass { alpha: 0.0 }]),
            Err(ObserverError::AlphaOutOfRange(_))
        ));
        assert!(ObserverChain::new(0.1, vec![ObserverStage::LowPass { alpha: 1.0 }]).is_ok());
    }

    fn cv_spec() -> KalmanSpec {
        KalmanSpec {
            ts: 1.0 / 30.0,
            process_intensity: 1.0,
            meas_var: 1e-4,
            init_pos_var: 1.0,
            init_vel_var: 1.0,
        }
    }

    #[test]
    fn kalman_tracks_position_with_tiny_meas_noise() {
        let mut spec = cv_spec();
        spec.meas_var = 1e-14;
        let mut x = [0.0, 0.0];
        let mut p = spec.init_cov();
        for t in 0..50 {
            let z = 0.3 * t as f64;
            kalman_filter_step(&spec, &mut x, &mut p, z).unwrap();
            assert!((x[0] - z).abs() < 1e-5, "t={t}: {} vs {z}", x[0]);
        }
    }

    #[test]
    fn kalman_converges_to_true_velocity_without_process_noise() {
        let mut spec = cv_spec();
        spec.process_intensity = 0.0;
        spec.meas_var = 1e-6;
        let v = 1.7;
        let mut x = [0.0, 0.0];
        let mut p = spec.init_cov();
        for t in 0..100 {
            let z = v * spec.ts * t as f64;
            kalman_filter_step(&spec, &mut x, &mut p, z).unwrap();
        }
        assert!((x[1] - v).abs() < 1e-6, "{}", x[1]);
    }

    #[test]
    fn kalman_covariance_reaches_riccati_fixed_point() {
        let spec = cv_spec();
        let mut p = spec.init_cov();
        for _ in 0..10_000 {
            cov_predict_update(&spec, &mut p).unwrap();
        }
        let frozen = p;
        cov_predict_update(&spec, &mut p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let rel = (p[i][j] - frozen[i][j]).abs() / frozen[i][j].abs().max(1e-300);
                assert!(rel < 1e-8, "({i},{j}): {rel}");
            }
        }
    }

    #[test]
    fn smoother_reproduces_noiseless_constant_velocity() {
        // noiseless data and a near-zero modeled measurement noise: the
        // smoother must pin positions to the measurements
        let mut spec = cv_spec();
        spec.meas_var = 1e-14;
        let v = -0.8;
        let meas: Vec<f64> = (0..60).map(|t| v * spec.ts * t as f64).collect();
        let sm = kalman_smooth(&spec, &meas).unwrap();
        for (t, pt) in sm.iter().enumerate() {
            assert!((pt.pos - meas[t]).abs() < 1e-9, "t={t}: {} vs {}", pt.pos, meas[t]);
        }
    }

    #[test]
    fn smoothed_variance_below_filtered_variance() {
        let spec = cv_spec();
        let mut rng = Seed::new(5).rng();
        let meas: Vec<f64> = (0..80)
            .map(|t| 0.5 * spec.ts * t as f64 + 0.01 * rng.normal())
            .collect();
        let mut x = [meas[0], 0.0];
        let mut p = spec.init_cov();
        let mut filtered_var = Vec::new();
        for &z in &meas {
            kalman_filter_step(&spec, &mut x, &mut p, z).unwrap();
            filtered_var.push((p[0][0], p[1][1]));
        }
        let sm = kalman_smooth(&spec, &meas).unwrap();
        for t in 0..meas.len() {
            assert!(sm[t].cov[0][0] <= filtered_var[t].0 + 1e-12, "pos var t={t}");
            assert!(sm[t].cov[1][1] <= filtered_var[t].1 + 1e-12, "vel var t={t}");
        }
    }

    #[test]
    fn smoother_needs_two_measurements() {
        assert!(matches!(
            kalman_smooth(&cv_spec(), &[1.0]),
            Err(ObserverError::TooFewMeasurements(1))
        ));
    }

    #[test]
    fn chain_memory_depths() {
        let chain = ObserverChain::new(
            0.1,
            vec![
                ObserverStage::CausalDiff,
                ObserverStage::LowPass { alpha: 0.5 },
            ],
        )
        .unwrap();
        assert_eq!(chain.memory_depths(), (1, 1));
    }

    #[test]
    fn chain_on_ramp_lags_but_converges() {
        let ts = 1.0 / 30.0;
        let chain = ObserverChain::new(
            ts,
            vec![
                ObserverStage::CausalDiff,
                ObserverStage::LowPass { alpha: 0.5 },
            ],
        )
        .unwrap();
        let v = 1.1;
        let mut st = chain.init_state(&[0.0]);
        let mut last_err = f64::INFINITY;
        for t in 0..40 {
            let obs = chain.observe(&mut st, &[v * ts * t as f64], None).unwrap();
            let err = (obs.vel[0] - v).abs();
            if t >= 1 {
                assert!(err > 0.0, "low-pass is never exact in finite time (t={t})");
                assert!(err < last_err, "t={t}");
            }
            last_err = err;
        }
        assert!(last_err < 1e-4);
    }

    #[test]
    fn per_particle_states_are_isolated() {
        let chain = ObserverChain::new(
            0.1,
            vec![
                ObserverStage::CausalDiff,
                ObserverStage::LowPass { alpha: 0.5 },
            ],
        )
        .unwrap();
        let mut a = chain.init_state(&[0.0]);
        let mut b = chain.init_state(&[0.0]);
        for t in 0..10 {
            let q = [0.2 * t as f64];
            let oa = chain.observe(&mut a, &q, None).unwrap();
            let ob = chain.observe(&mut b, &q, None).unwrap();
            assert_eq!(oa, ob);
        }
    }

    #[test]
    fn gradients_flow_through_chain() {
        let chain = ObserverChain::new(
            0.1,
            vec![
                ObserverStage::CausalDiff,
                ObserverStage::LowPass { alpha: 0.5 },
            ],
        )
        .unwrap();
        let tape = Tape::new();
        let q0 = tape.vars(&[0.3]);
        let mut st = chain.init_state_var(&q0);
        chain.observe_var(&mut st, &q0, None).unwrap();
        let q1 = tape.vars(&[0.5]);
        let (pos, vel) = chain.observe_var(&mut st, &q1, None).unwrap();
        let g = tape.reverse(vel[0]);
        assert!(g.wrt(q1[0]) != 0.0, "dz/dq must be nonzero");
        let gp = tape.reverse(pos[0]);
        assert_eq!(gp.wrt(q1[0]), 1.0);
    }

    #[test]
    fn var_chain_matches_plain_chain() {
        let spec = cv_spec();
        let chain = ObserverChain::new(
            spec.ts,
            vec![
                ObserverStage::KalmanFilter(spec),
                ObserverStage::LowPass { alpha: 0.7 },
            ],
        )
        .unwrap();
        let mut rng = Seed::new(9).rng();
        let meas: Vec<f64> = (0..25)
            .map(|t| 0.4 * t as f64 * spec.ts + 0.01 * rng.normal())
            .collect();

        let mut st = chain.init_state(&[meas[0]]);
        let tape = Tape::new();
        let q0 = tape.vars(&[meas[0]]);
        let mut stv = chain.init_state_var(&q0);

        for &m in &meas {
            let plain = chain.observe(&mut st, &[m], None).unwrap();
            let qv = tape.vars(&[m]);
            let (pv, vv) = chain.observe_var(&mut stv, &qv, None).unwrap();
            assert!((plain.pos[0] - pv[0].value()).abs() < 1e-12);
            assert!((plain.vel[0] - vv[0].value()).abs() < 1e-12);
        }
    }

    #[test]
    fn online_chain_lags_sine_central_difference_does_not() {
        // 1 Hz sine sampled at 30 Hz: the cross-correlation peak of the
        // online chain's velocity against the true derivative sits at >= 1
        // sample of lag; the offline central difference peaks at zero lag.
        let ts = 1.0 / 30.0;
        let n = 300;
        let omega = 2.0 * core::f64::consts::PI;
        let pos: Vec<f64> = (0..n).map(|t| (omega * ts * t as f64).sin()).collect();
        let true_vel: Vec<f64> = (0..n)
            .map(|t| omega * (omega * ts * t as f64).cos())
            .collect();

        let chain = ObserverChain::new(
            ts,
            vec![
                ObserverStage::CausalDiff,
                ObserverStage::LowPass { alpha: 0.5 },
            ],
        )
        .unwrap();
        let mut st = chain.init_state(&[pos[0]]);
        let online: Vec<f64> = pos
            .iter()
            .map(|&p| chain.observe(&mut st, &[p], None).unwrap().vel[0])
            .collect();

        let central: Vec<f64> = (0..n)
            .map(|t| {
                if t == 0 || t == n - 1 {
                    0.0
                } else {
                    (pos[t + 1] - pos[t - 1]) / (2.0 * ts)
                }
            })
            .collect();

        let skip = 30; // discard the transient
        let xcorr_peak = |est: &[f64]| -> i64 {
            let mut best = (f64::NEG_INFINITY, 0i64);
            for lag in -5i64..=5 {
                let mut s = 0.0;
                for t in skip..n - skip {
                    let shifted = (t as i64 - lag) as usize;
                    s += est[t] * true_vel[shifted];
                }
                if s > best.0 {
                    best = (s, lag);
                }
            }
            best.1
        };
        assert!(
            xcorr_peak(&online) >= 1,
            "online lag {}",
            xcorr_peak(&online)
        );
        assert_eq!(xcorr_peak(&central), 0);
    }
}
