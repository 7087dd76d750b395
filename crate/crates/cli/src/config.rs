//! Experiment configuration: a single TOML file, schema-validated with
//! unknown keys rejected. The schema is documented in the repository README.

use serde::{Deserialize, Serialize};
use std::path::Path;

use pmsrl_core::dynamics::OfflineFilterKind;
use pmsrl_core::envs::CartPoleParams;
use pmsrl_core::gp::KernelChoice;
use pmsrl_core::observers::{KalmanSpec, ObserverChain, ObserverStage};
use pmsrl_core::rollout::Mode;

use crate::error::HarnessError;

fn default_true_range() -> Vec<[f64; 2]> {
    Vec::new()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub offline_filter: OfflineFilterSection,
    #[serde(default)]
    pub online_observer: OnlineObserverSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub exploration: ExplorationSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub trials: usize,
    pub root_seed: u64,
    pub out_dir: String,
    /// "full-state" or "observed".
    #[serde(default = "default_mode")]
    pub mode: String,
}

fn default_mode() -> String {
    "observed".to_owned()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// Only "cartpole" is a simulated plant.
    pub kind: String,
    #[serde(default = "default_hz")]
    pub control_hz: f64,
    #[serde(default = "default_trial_seconds")]
    pub trial_seconds: f64,
    #[serde(default = "default_meas_noise")]
    pub measurement_noise_std: f64,
    #[serde(default = "default_cart_mass")]
    pub cart_mass: f64,
    #[serde(default = "default_cart_mass")]
    pub pole_mass: f64,
    #[serde(default = "default_pole_length")]
    pub pole_length: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default = "default_substep")]
    pub substep: f64,
    #[serde(default)]
    pub process_noise_std: Option<[f64; 4]>,
}

fn default_hz() -> f64 {
    30.0
}
fn default_trial_seconds() -> f64 {
    3.0
}
fn default_meas_noise() -> f64 {
    3e-3
}
fn default_cart_mass() -> f64 {
    0.5
}
fn default_pole_length() -> f64 {
    0.5
}
fn default_friction() -> f64 {
    0.1
}
fn default_gravity() -> f64 {
    9.81
}
fn default_substep() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "se" | "mp" | "se+mp" | "pi" | "sp".
    pub kernel: String,
    /// Degree for the polynomial variants.
    pub degree: usize,
    /// Marginal-likelihood iterations for the first fit of a trial sequence.
    pub gp_opt_iters: usize,
    /// Iterations for warm-started refits on later trials.
    pub gp_refit_iters: usize,
    pub gp_learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kernel: "se".to_owned(),
            degree: 2,
            gp_opt_iters: 1500,
            gp_refit_iters: 300,
            gp_learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineFilterSection {
    /// "central-difference" | "kalman-smoother".
    pub kind: String,
    pub process_intensity: f64,
    pub meas_var: f64,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
}

impl Default for OfflineFilterSection {
    fn default() -> Self {
        OfflineFilterSection {
            kind: "central-difference".to_owned(),
            process_intensity: 50.0,
            meas_var: 9e-6,
            init_pos_var: 1.0,
            init_vel_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineObserverSection {
    /// Ordered stage names: "causal-diff" | "low-pass" | "kalman".
    pub stages: Vec<String>,
    pub low_pass_alpha: f64,
    pub kalman_process_intensity: f64,
    pub kalman_meas_var: f64,
    pub kalman_init_pos_var: f64,
    pub kalman_init_vel_var: f64,
}

impl Default for OnlineObserverSection {
    fn default() -> Self {
        OnlineObserverSection {
            stages: vec!["causal-diff".to_owned(), "low-pass".to_owned()],
            low_pass_alpha: 0.5,
            kalman_process_intensity: 50.0,
            kalman_meas_var: 9e-6,
            kalman_init_pos_var: 0.01,
            kalman_init_vel_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub n_basis: usize,
    pub u_max: f64,
    /// Per policy-input-dimension center ranges; empty means
    /// environment defaults.
    #[serde(default = "default_true_range")]
    pub center_ranges: Vec<[f64; 2]>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            n_basis: 200,
            u_max: 10.0,
            center_ranges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub particles: usize,
    pub opt_iters: usize,
    pub learning_rate: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            particles: 50,
            opt_iters: 300,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationSection {
    /// "random" | "sum-of-sines".
    pub kind: String,
    pub amplitude: f64,
    pub n_waves: usize,
}

impl Default for ExplorationSection {
    fn default() -> Self {
        ExplorationSection {
            kind: "random".to_owned(),
            amplitude: 10.0,
            n_waves: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub n_runs: usize,
    /// Success: | |theta| - pi | within this tolerance ...
    pub success_angle_tol: f64,
    /// ... and |p| within this bound ...
    pub success_pos_tol: f64,
    /// ... for every step of this final window.
    pub success_window_seconds: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            n_runs: 50,
            success_angle_tol: 0.17,
            success_pos_tol: 0.1,
            success_window_seconds: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_owned()));
        if self.experiment.trials == 0 {
            return bad("experiment.trials must be >= 1");
        }
        if self.environment.kind != "cartpole" {
            return bad("environment.kind: only \"cartpole\" is a simulated plant");
        }
        if !(self.environment.control_hz > 0.0) {
            return bad("environment.control_hz must be positive");
        }
        if !(self.environment.trial_seconds > 0.0) {
            return bad("environment.trial_seconds must be positive");
        }
        if self.environment.measurement_noise_std < 0.0 {
            return bad("environment.measurement_noise_std must be >= 0");
        }
        self.mode()?;
        self.kernel_choice()?;
        self.offline_filter_kind()?;
        self.observer_stages()?;
        if !(self.online_observer.low_pass_alpha > 0.0 && self.online_observer.low_pass_alpha <= 1.0)
        {
            return bad("online_observer.low_pass_alpha must lie in (0, 1]");
        }
        if self.policy.n_basis == 0 {
            return bad("policy.n_basis must be >= 1");
        }
        if !(self.policy.u_max > 0.0) {
            return bad("policy.u_max must be positive");
        }
        if self.optimizer.particles == 0 {
            return bad("optimizer.particles must be >= 1");
        }
        match self.exploration.kind.as_str() {
            "random" | "sum-of-sines" => {}
            other => {
                return Err(HarnessError::Config(format!(
                    "exploration.kind: unknown generator {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Result<Mode, HarnessError> {
        match self.experiment.mode.as_str() {
            "full-state" => Ok(Mode::FullState),
            "observed" => Ok(Mode::ObservedState),
            other => Err(HarnessError::Config(format!(
                "experiment.mode: expected \"full-state\" or \"observed\", got {other:?}"
            ))),
        }
    }

    pub fn kernel_choice(&self) -> Result<KernelChoice, HarnessError> {
        match self.model.kernel.as_str() {
            "se" => Ok(KernelChoice::Se),
            "mp" => Ok(KernelChoice::Mp {
                degree: self.model.degree,
            }),
            "se+mp" => Ok(KernelChoice::SeMp {
                degree: self.model.degree,
            }),
            "pi" => Ok(KernelChoice::Pi),
            "sp" => Ok(KernelChoice::Sp),
            other => Err(HarnessError::Config(format!(
                "model.kernel: unknown kernel {other:?}"
            ))),
        }
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.environment.control_hz
    }

    pub fn steps_per_trial(&self) -> usize {
        (self.environment.trial_seconds * self.environment.control_hz).round() as usize
    }

    pub fn cartpole_params(&self) -> CartPoleParams {
        CartPoleParams {
            cart_mass: self.environment.cart_mass,
            pole_mass: self.environment.pole_mass,
            pole_len: self.environment.pole_length,
            friction: self.environment.friction,
            gravity: self.environment.gravity,
            substep: self.environment.substep,
            ts: self.ts(),
            process_noise_std: self.environment.process_noise_std.unwrap_or([0.0; 4]),
        }
    }

    pub fn offline_filter_kind(&self) -> Result<OfflineFilterKind, HarnessError> {
        match self.offline_filter.kind.as_str() {
            "central-difference" => Ok(OfflineFilterKind::CentralDifference),
            "kalman-smoother" => Ok(OfflineFilterKind::KalmanSmoother {
                process_intensity: self.offline_filter.process_intensity,
                meas_var: self.offline_filter.meas_var,
                init_pos_var: self.offline_filter.init_pos_var,
                init_vel_var: self.offline_filter.init_vel_var,
            }),
            other => Err(HarnessError::Config(format!(
                "offline_filter.kind: unknown filter {other:?}"
            ))),
        }
    }

    pub fn observer_stages(&self) -> Result<Vec<ObserverStage>, HarnessError> {
        self.online_observer
            .stages
            .iter()
            .map(|s| match s.as_str() {
                "causal-diff" => Ok(ObserverStage::CausalDiff),
                "low-pass" => Ok(ObserverStage::LowPass {
                    alpha: self.online_observer.low_pass_alpha,
                }),
                "kalman" => Ok(ObserverStage::KalmanFilter(KalmanSpec {
                    ts: self.ts(),
                    process_intensity: self.online_observer.kalman_process_intensity,
                    meas_var: self.online_observer.kalman_meas_var,
                    init_pos_var: self.online_observer.kalman_init_pos_var,
                    init_vel_var: self.online_observer.kalman_init_vel_var,
                })),
                other => Err(HarnessError::Config(format!(
                    "online_observer.stages: unknown stage {other:?}"
                ))),
            })
            .collect()
    }

    pub fn online_chain(&self) -> Result<ObserverChain, HarnessError> {
        Ok(ObserverChain::new(self.ts(), self.observer_stages()?)?)
    }

    /// Policy-input center ranges: configured values, or cart-pole defaults
    /// over `[p, pdot, thetadot, sin, cos]`.
    pub fn center_ranges(&self) -> Vec<(f64, f64)> {
        if !self.policy.center_ranges.is_empty() {
            return self.policy.center_ranges.iter().map(|r| (r[0], r[1])).collect();
        }
        vec![
            (-1.0, 1.0),
            (-3.0, 3.0),
            (-10.0, 10.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
        ]
    }
}
