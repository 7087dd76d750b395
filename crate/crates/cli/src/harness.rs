//! The experiment runner: alternating trials of data collection, model
//! fitting, policy optimization, and policy execution on the ground-truth
//! plant, followed by a Monte Carlo evaluation of the final policy.
//!
//! Phase separation is structural: model fitting consumes offline-filtered
//! velocity estimates only, while the executed policy only ever sees the
//! online observer's output (never the plant's true velocities). Both filters
//! carry invocation counters, snapshotted into every trial record, so the
//! separation is checkable after the fact.
//!
//! Everything an experiment writes is a pure function of the configuration
//! and the root seed; wall-clock timings go into a separate sidecar file that
//! deterministic comparisons exclude.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use pmsrl_core::dynamics::{
    build_training_set, DeltaModel, OfflineFilter, StateEncoder, Trajectory,
};
use pmsrl_core::envs::{
    cartpole_encoder, cartpole_init_dist, exploration_random, exploration_sum_of_sines,
    CartPole, CartPoleAngleCost, TipCost, DEFAULT_FREQ_BAND,
};
use pmsrl_core::linalg::Mat;
use pmsrl_core::observers::{MeasurementModel, ObserverChain};
use pmsrl_core::policy::{PolicyInit, RbfPolicy};
use pmsrl_core::rng::Seed;
use pmsrl_core::rollout::{
    optimize_policy, simulate_particles, InitialStateDist, RolloutConfig,
};
use pmsrl_core::state::State;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::formats;

const NS_TRIALS: u64 = 0;
const NS_EVAL: u64 = 1;
const NS_STUDY: u64 = 2;

/// Filter invocation counts around the two instrumented phases of one trial.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PhaseCounters {
    /// Offline-filter calls while building the training set (> 0 on fitting
    /// trials).
    pub offline_calls_model_phase: u64,
    /// Online-chain calls during the model phase; always 0.
    pub online_calls_model_phase: u64,
    /// Offline-filter calls during policy execution; always 0.
    pub offline_calls_execution_phase: u64,
    /// Online-chain calls during execution (one per control step).
    pub online_calls_execution_phase: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GpTrainReport {
    pub initial_lml: f64,
    pub final_lml: f64,
    pub iters_run: usize,
    pub diverged: bool,
    pub noise_var: f64,
}

/// Everything recorded about one trial. Paths are relative to the run
/// directory; wall-clock timings live in the separate sidecar.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// Total plant interaction time collected up to and including this trial.
    pub interaction_seconds: f64,
    /// Training rows available to the model phase of this trial.
    pub training_rows: usize,
    pub gp_reports: Vec<GpTrainReport>,
    pub opt_iters_run: usize,
    pub lr_halvings: u32,
    /// Final Monte Carlo cost estimate of the optimized policy on the model.
    pub final_j_hat: Option<f64>,
    /// Cumulative evaluation-metric cost of the executed trajectory.
    pub eval_cost: f64,
    pub success: bool,
    pub phase_counters: PhaseCounters,
    pub trajectory_file: String,
    pub true_trajectory_file: String,
    pub policy_file: Option<String>,
    pub model_file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRun {
    pub success: bool,
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalOutcome {
    pub n_runs: usize,
    /// Absent when `n_runs == 0`.
    pub success_rate: Option<f64>,
    pub runs: Vec<EvalRun>,
    #[serde(skip)]
    pub trajectories: Vec<Vec<State>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecords {
    pub mode: String,
    pub root_seed: u64,
    pub trials: Vec<TrialRecord>,
    pub evaluation: Option<EvalOutcome>,
}

pub struct RunOutcome {
    pub records: RunRecords,
    pub final_policy: Option<RbfPolicy>,
    pub final_model: Option<DeltaModel>,
}

/// One policy (or exploration) execution on the ground-truth plant through
/// the measurement system and the online observer.
pub struct ExecutionResult {
    pub measured: Trajectory,
    pub true_states: Vec<State>,
    pub cumulative_cost: f64,
    pub success: bool,
}

struct Setup {
    plant: CartPole,
    encoder: StateEncoder,
    measurement: MeasurementModel,
    online: ObserverChain,
    offline: OfflineFilter,
    init: InitialStateDist,
    eval_cost: TipCost,
    t_steps: usize,
    has_process_noise: bool,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
    let params = cfg.cartpole_params();
    Ok(Setup {
        plant: CartPole::new(params),
        encoder: cartpole_encoder(),
        measurement: MeasurementModel::new(vec![cfg.environment.measurement_noise_std; 2]),
        online: cfg.online_chain()?,
        offline: OfflineFilter::new(cfg.offline_filter_kind()?),
        init: cartpole_init_dist(),
        eval_cost: TipCost {
            pole_len: cfg.environment.pole_length,
        },
        t_steps: cfg.steps_per_trial(),
        has_process_noise: params.process_noise_std.iter().any(|s| *s > 0.0),
    })
}

enum Controller<'a> {
    Exploration(&'a Mat),
    Policy(&'a RbfPolicy),
}

/// Runs one episode on the plant. The controller sees only the online
/// observer's output; the returned trajectory holds the *measured* positions
/// (what reality would log) while costs and the success flag use the true
/// states.
fn execute_on_plant(
    s: &Setup,
    cfg: &ExperimentConfig,
    controller: Controller<'_>,
    seed: &Seed,
) -> ExecutionResult {
    let d_q = 2;
    let mut state = s.init.sample(&mut seed.child(0).rng());
    let meas_seed = seed.child(1);
    let plant_seed = seed.child(2);

    let mut eps = vec![0.0; d_q];
    let mut qbar = vec![0.0; d_q];
    meas_seed.child(0).rng().fill_normal(&mut eps);
    s.measurement.measure(&state.q, &eps, &mut qbar);
    let mut chain_state = s.online.init_state(&qbar);

    let mut times = Vec::with_capacity(s.t_steps + 1);
    let mut measured = Vec::with_capacity(s.t_steps + 1);
    let mut applied = Vec::with_capacity(s.t_steps);
    let mut true_states = Vec::with_capacity(s.t_steps + 1);
    let mut cost_sum = 0.0;
    let mut z = Vec::new();

    for t in 0..=s.t_steps {
        if t > 0 {
            meas_seed.child(t as u64).rng().fill_normal(&mut eps);
            s.measurement.measure(&state.q, &eps, &mut qbar);
        }
        times.push(t as f64 * s.plant.params.ts);
        measured.push(qbar.clone());
        true_states.push(state.clone());
        cost_sum += pmsrl_core::rollout::CostFunction::cost(&s.eval_cost, &state);
        if t == s.t_steps {
            break;
        }
        // the policy never sees true velocities, only the observer output
        let obs = s
            .online
            .observe(&mut chain_state, &qbar, None)
            .expect("online chain");
        let u = match controller {
            Controller::Exploration(controls) => controls.at(t, 0),
            Controller::Policy(policy) => {
                s.encoder.encode_into(&obs.pos, &obs.vel, &mut z);
                policy.evaluate(&z)[0]
            }
        };
        applied.push(vec![u]);
        let noise_seed = plant_seed.child(t as u64);
        state = s.plant.step(
            &state,
            u,
            s.has_process_noise.then_some(&noise_seed),
        );
    }

    let success = success_over_final_window(cfg, &true_states);
    let measured = Trajectory::new(times, Mat::from_rows(&measured), Mat::from_rows(&applied))
        .expect("uniform by construction");
    ExecutionResult {
        measured,
        true_states,
        cumulative_cost: cost_sum,
        success,
    }
}

/// Swing-up success: `||theta| - pi|` within the angle tolerance and `|p|`
/// within the position bound for every step of the final window.
pub fn success_over_final_window(cfg: &ExperimentConfig, states: &[State]) -> bool {
    let window =
        (cfg.evaluation.success_window_seconds * cfg.environment.control_hz).ceil() as usize;
    if states.len() < window || window == 0 {
        return false;
    }
    states[states.len() - window..].iter().all(|s| {
        (s.q[1].abs() - std::f64::consts::PI).abs() <= cfg.evaluation.success_angle_tol
            && s.q[0].abs() <= cfg.evaluation.success_pos_tol
    })
}

fn true_states_csv(states: &[State], ts: f64) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("t,p,pdot,theta,thetadot\n");
    for (t, s) in states.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            ts * t as f64,
            s.q[0],
            s.qdot[0],
            s.q[1],
            s.qdot[1]
        );
    }
    out
}

fn exploration_controls(cfg: &ExperimentConfig, t_steps: usize, seed: &Seed) -> Mat {
    match cfg.exploration.kind.as_str() {
        "sum-of-sines" => exploration_sum_of_sines(
            cfg.exploration.amplitude,
            cfg.exploration.n_waves,
            t_steps,
            1.0 / cfg.environment.control_hz,
            &[cfg.policy.u_max],
            DEFAULT_FREQ_BAND,
            seed,
        ),
        _ => exploration_random(&[cfg.policy.u_max], t_steps, seed),
    }
}

fn rollout_config(cfg: &ExperimentConfig, s: &Setup) -> Result<RolloutConfig, HarnessError> {
    Ok(RolloutConfig {
        horizon: s.t_steps,
        particles: cfg.optimizer.particles,
        mode: cfg.mode()?,
        cost: Box::new(CartPoleAngleCost::default()),
        init: cartpole_init_dist(),
        measurement: s.measurement.clone(),
        // fresh instance, so its calls do not pollute the execution chain's
        // phase counter
        observer: s.online.clone(),
    })
}

/// Runs the full trial loop and writes every artifact under `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let s = setup(cfg)?;
    let root = Seed::new(cfg.experiment.root_seed);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(out_dir.display().to_string(), e))?;
    formats::write_file(&out_dir.join("config_echo.toml"), &cfg.to_toml())?;

    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut policy: Option<RbfPolicy> = None;
    let mut model: Option<DeltaModel> = None;
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut aborted = false;

    for trial in 1..=cfg.experiment.trials {
        let trial_seed = root.child(NS_TRIALS).child(trial as u64);
        let trial_dir = out_dir.join(format!("trial_{trial:02}"));
        let rel = |name: &str| format!("trial_{trial:02}/{name}");

        let mut record = TrialRecord {
            trial,
            interaction_seconds: 0.0,
            training_rows: 0,
            gp_reports: Vec::new(),
            opt_iters_run: 0,
            lr_halvings: 0,
            final_j_hat: None,
            eval_cost: 0.0,
            success: false,
            phase_counters: PhaseCounters::default(),
            trajectory_file: rel("trajectory.csv"),
            true_trajectory_file: rel("true_trajectory.csv"),
            policy_file: None,
            model_file: None,
            error: None,
        };

        // ---- model + policy phase (all data collected so far) ----
        let offline_before = s.offline.call_count();
        let online_before = s.online.call_count();
        if trial > 1 {
            let phase_start = Instant::now();
            let set = match build_training_set(&trajectories, &s.encoder, &s.offline) {
                Ok(set) => set,
                Err(e) => {
                    record.error = Some(format!("training set: {e}"));
                    records.push(record);
                    aborted = true;
                    break;
                }
            };
            record.training_rows = set.len();
            formats::write_file(
                &trial_dir.join("training_set.csv"),
                &formats::training_set_to_csv(&set),
            )?;
            let gp_iters = if trial == 2 {
                cfg.model.gp_opt_iters
            } else {
                cfg.model.gp_refit_iters
            };
            let trained = DeltaModel::train(
                cfg.kernel_choice()?,
                s.plant.params.ts,
                s.encoder.clone(),
                &set,
                gp_iters,
                cfg.model.gp_learning_rate,
                warm.as_deref(),
            );
            let (new_model, reports) = match trained {
                Ok(x) => x,
                Err(e) => {
                    record.error = Some(format!("model fit: {e}"));
                    records.push(record);
                    aborted = true;
                    break;
                }
            };
            record.gp_reports = reports
                .iter()
                .zip(new_model.gps())
                .map(|(r, gp)| GpTrainReport {
                    initial_lml: r.initial_lml,
                    final_lml: r.final_lml,
                    iters_run: r.iters_run,
                    diverged: r.diverged,
                    noise_var: gp.noise_var(),
                })
                .collect();
            warm = Some(new_model.gps().iter().map(|g| g.hyper_params()).collect());
            timings.push((format!("trial_{trial:02}/model_fit"), phase_start.elapsed().as_secs_f64()));

            let opt_start = Instant::now();
            let seed_policy = policy.take().map(Ok::<_, HarnessError>).unwrap_or_else(|| {
                Ok(RbfPolicy::initialize(
                    &PolicyInit {
                        n_basis: cfg.policy.n_basis,
                        u_max: vec![cfg.policy.u_max],
                        center_ranges: cfg.center_ranges(),
                    },
                    &trial_seed.child(1),
                )?)
            })?;
            let rollout_cfg = rollout_config(cfg, &s)?;
            match optimize_policy(
                &rollout_cfg,
                &new_model,
                &seed_policy,
                cfg.optimizer.opt_iters,
                cfg.optimizer.learning_rate,
                &trial_seed.child(2),
            ) {
                Ok(outcome) => {
                    formats::write_file(
                        &trial_dir.join("opt_trace.csv"),
                        &formats::trace_to_csv(&outcome.history),
                    )?;
                    record.opt_iters_run = outcome.history.len();
                    record.lr_halvings = outcome.lr_halvings;
                    record.final_j_hat = outcome.history.last().map(|r| r.j_hat);
                    policy = Some(outcome.policy);
                }
                Err(e) => {
                    // keep the previous policy if one exists; without any
                    // policy the remaining trials are meaningless
                    record.error = Some(format!("policy optimization: {e}"));
                    policy = Some(seed_policy);
                    if trial == 2 {
                        records.push(record);
                        aborted = true;
                        break;
                    }
                }
            }
            timings.push((format!("trial_{trial:02}/policy_opt"), opt_start.elapsed().as_secs_f64()));

            formats::write_file(&trial_dir.join("model.json"), &formats::model_to_json(&new_model)?)?;
            record.model_file = Some(rel("model.json"));
            if let Some(p) = &policy {
                formats::write_file(&trial_dir.join("policy.json"), &formats::policy_to_json(p))?;
                record.policy_file = Some(rel("policy.json"));
            }
            model = Some(new_model);
        }
        record.phase_counters.offline_calls_model_phase = s.offline.call_count() - offline_before;
        record.phase_counters.online_calls_model_phase = s.online.call_count() - online_before;

        // ---- execution phase ----
        let exec_start = Instant::now();
        let offline_before = s.offline.call_count();
        let online_before = s.online.call_count();
        let exploration;
        let controller = if trial == 1 {
            exploration = exploration_controls(cfg, s.t_steps, &trial_seed.child(0));
            Controller::Exploration(&exploration)
        } else {
            Controller::Policy(policy.as_ref().expect("policy exists after trial 1"))
        };
        let exec = execute_on_plant(&s, cfg, controller, &trial_seed.child(3));
        record.phase_counters.offline_calls_execution_phase =
            s.offline.call_count() - offline_before;
        record.phase_counters.online_calls_execution_phase = s.online.call_count() - online_before;
        timings.push((format!("trial_{trial:02}/execution"), exec_start.elapsed().as_secs_f64()));

        formats::write_file(
            &trial_dir.join("trajectory.csv"),
            &formats::trajectory_to_csv(&exec.measured),
        )?;
        formats::write_file(
            &trial_dir.join("true_trajectory.csv"),
            &true_states_csv(&exec.true_states, s.plant.params.ts),
        )?;
        record.eval_cost = exec.cumulative_cost;
        record.success = exec.success;
        trajectories.push(exec.measured);
        record.interaction_seconds = trajectories
            .iter()
            .map(|t| t.steps() as f64 * s.plant.params.ts)
            .sum();
        records.push(record);
    }

    // degenerate single-trial runs still fit the GPs and emit a report
    if cfg.experiment.trials == 1 && !aborted {
        let set = build_training_set(&trajectories, &s.encoder, &s.offline)?;
        let (m, reports) = DeltaModel::train(
            cfg.kernel_choice()?,
            s.plant.params.ts,
            s.encoder.clone(),
            &set,
            cfg.model.gp_opt_iters,
            cfg.model.gp_learning_rate,
            None,
        )?;
        if let Some(rec) = records.last_mut() {
            rec.training_rows = set.len();
            rec.gp_reports = reports
                .iter()
                .zip(m.gps())
                .map(|(r, gp)| GpTrainReport {
                    initial_lml: r.initial_lml,
                    final_lml: r.final_lml,
                    iters_run: r.iters_run,
                    diverged: r.diverged,
                    noise_var: gp.noise_var(),
                })
                .collect();
            rec.model_file = Some("trial_01/model.json".to_owned());
        }
        formats::write_file(&out_dir.join("trial_01/model.json"), &formats::model_to_json(&m)?)?;
        model = Some(m);
    }

    // ---- final evaluation and study data ----
    let mut evaluation = None;
    if let (Some(p), false) = (&policy, aborted) {
        formats::write_file(&out_dir.join("final_policy.json"), &formats::policy_to_json(p))?;
        if let Some(m) = &model {
            formats::write_file(&out_dir.join("final_model.json"), &formats::model_to_json(m)?)?;
        }
        let eval_start = Instant::now();
        let eval = evaluate_policy_mc(cfg, p, &root.child(NS_EVAL))?;
        timings.push(("evaluation".to_owned(), eval_start.elapsed().as_secs_f64()));
        formats::write_file(
            &out_dir.join("eval/summary.json"),
            &serde_json::to_string_pretty(&eval).expect("eval serializes"),
        )?;
        if let Some(m) = &model {
            emit_study_data(cfg, m, p, &eval.trajectories, out_dir)?;
        }
        evaluation = Some(eval);
    }

    let records = RunRecords {
        mode: cfg.experiment.mode.clone(),
        root_seed: cfg.experiment.root_seed,
        trials: records,
        evaluation,
    };
    formats::write_file(
        &out_dir.join("records.json"),
        &serde_json::to_string_pretty(&records).expect("records serialize"),
    )?;
    let mut timing_csv = String::from("phase,seconds\n");
    for (phase, secs) in &timings {
        use std::fmt::Write as _;
        let _ = writeln!(timing_csv, "{phase},{secs:.3}");
    }
    formats::write_file(&out_dir.join("timings.csv"), &timing_csv)?;

    Ok(RunOutcome {
        records,
        final_policy: policy,
        final_model: model,
    })
}

/// Monte Carlo evaluation: `n_runs` plant executions of the policy through
/// the online observer from sampled initial states.
pub fn evaluate_policy_mc(
    cfg: &ExperimentConfig,
    policy: &RbfPolicy,
    seed: &Seed,
) -> Result<EvalOutcome, HarnessError> {
    let s = setup(cfg)?;
    let n_runs = cfg.evaluation.n_runs;
    let mut runs = Vec::with_capacity(n_runs);
    let mut trajectories = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let exec = execute_on_plant(&s, cfg, Controller::Policy(policy), &seed.child(run as u64));
        runs.push(EvalRun {
            success: exec.success,
            cumulative_cost: exec.cumulative_cost,
        });
        trajectories.push(exec.true_states);
    }
    let success_rate = (n_runs > 0)
        .then(|| runs.iter().filter(|r| r.success).count() as f64 / n_runs as f64);
    Ok(EvalOutcome {
        n_runs,
        success_rate,
        runs,
        trajectories,
    })
}

/// Writes the study CSVs: the particle panel (model rollouts under the final
/// policy) and the executed panel (plant runs from the evaluation).
pub fn emit_study_data(
    cfg: &ExperimentConfig,
    model: &DeltaModel,
    policy: &RbfPolicy,
    executed: &[Vec<State>],
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let s = setup(cfg)?;
    let rollout_cfg = rollout_config(cfg, &s)?;
    let root = Seed::new(cfg.experiment.root_seed);
    let (_, particles) = simulate_particles(&rollout_cfg, model, policy, &root.child(NS_STUDY))?;
    formats::write_file(
        &out_dir.join("study_particles.csv"),
        &formats::study_csv(&cfg.experiment.mode, &particles),
    )?;
    formats::write_file(
        &out_dir.join("study_executed.csv"),
        &formats::study_csv(&cfg.experiment.mode, executed),
    )?;
    Ok(())
}

/// Re-emits study data from a stored run directory (final model + policy +
/// eval trajectories are reconstructed deterministically from the config and
/// seeds echoed in the directory).
pub fn emit_from_records(records_dir: &Path, out_dir: &Path) -> Result<(), HarnessError> {
    let cfg = ExperimentConfig::from_path(&records_dir.join("config_echo.toml"))?;
    let model = formats::model_from_json(&formats::read_file(&records_dir.join("final_model.json"))?)?;
    let policy =
        formats::policy_from_json(&formats::read_file(&records_dir.join("final_policy.json"))?)?;
    let root = Seed::new(cfg.experiment.root_seed);
    let eval = evaluate_policy_mc(&cfg, &policy, &root.child(NS_EVAL))?;
    emit_study_data(&cfg, &model, &policy, &eval.trajectories, out_dir)
}

/// Directories under `root` that look like run directories (contain
/// `records.json`), or `root` itself.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if root.join("records.json").exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| HarnessError::io(root.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("records.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}
