//! On-disk formats: trajectory/training-set CSV, model and policy JSON
//! snapshots, optimization traces, and study CSVs.
//!
//! All floats are written with Rust's shortest-roundtrip formatting, so
//! writing and re-reading is bit-exact and re-emission of identical data is
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use pmsrl_core::dynamics::{DeltaModel, StateEncoder, Trajectory};
use pmsrl_core::gp::{GpModel, Kernel, LinearBasis, MpFactor, MpKernel, PiKernel, SeKernel};
use pmsrl_core::linalg::Mat;
use pmsrl_core::policy::RbfPolicy;
use pmsrl_core::state::State;

use crate::error::HarnessError;

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| HarnessError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

pub fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

/// `t, q_1..q_dq, u_1..u_du`; the final row has empty control cells (there
/// are `T+1` samples but only `T` controls).
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let d_q = traj.positions.cols();
    let d_u = traj.controls.cols();
    let mut out = String::new();
    out.push('t');
    for i in 1..=d_q {
        let _ = write!(out, ",q_{i}");
    }
    for i in 1..=d_u {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for t in 0..traj.positions.rows() {
        let _ = write!(out, "{}", traj.times[t]);
        for i in 0..d_q {
            let _ = write!(out, ",{}", traj.positions.at(t, i));
        }
        for i in 0..d_u {
            if t < traj.controls.rows() {
                let _ = write!(out, ",{}", traj.controls.at(t, i));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Format("empty trajectory file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d_q = cols.iter().filter(|c| c.starts_with("q_")).count();
    let d_u = cols.iter().filter(|c| c.starts_with("u_")).count();
    if cols.first() != Some(&"t") || d_q == 0 {
        return Err(HarnessError::Format(format!(
            "unexpected trajectory header {header:?}"
        )));
    }
    let mut times = Vec::new();
    let mut positions: Vec<Vec<f64>> = Vec::new();
    let mut controls: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + d_q + d_u {
            return Err(HarnessError::Format(format!(
                "trajectory line {}: expected {} fields, got {}",
                ln + 2,
                1 + d_q + d_u,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, HarnessError> {
            s.parse()
                .map_err(|_| HarnessError::Format(format!("bad float {s:?} on line {}", ln + 2)))
        };
        times.push(parse(fields[0])?);
        positions.push(
            fields[1..=d_q]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<_, _>>()?,
        );
        if fields[1 + d_q..].iter().all(|f| !f.is_empty()) {
            controls.push(
                fields[1 + d_q..]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<_, _>>()?,
            );
        }
    }
    let positions = Mat::from_rows(&positions);
    let controls = if controls.is_empty() {
        Mat::zeros(times.len().saturating_sub(1), d_u)
    } else {
        Mat::from_rows(&controls)
    };
    Trajectory::new(times, positions, controls)
        .map_err(|e| HarnessError::Format(format!("invalid trajectory: {e}")))
}

/// Training-set export: `x_1..x_d, y_1..y_dq`.
pub fn training_set_to_csv(set: &pmsrl_core::dynamics::TrainingSet) -> String {
    let d_x = set.inputs.cols();
    let d_y = set.targets.cols();
    let mut out = String::new();
    for i in 1..=d_x {
        let _ = write!(out, "{}x_{i}", if i == 1 { "" } else { "," });
    }
    for i in 1..=d_y {
        let _ = write!(out, ",y_{i}");
    }
    out.push('\n');
    for r in 0..set.len() {
        for i in 0..d_x {
            let _ = write!(out, "{}{}", if i == 0 { "" } else { "," }, set.inputs.at(r, i));
        }
        for i in 0..d_y {
            let _ = write!(out, ",{}", set.targets.at(r, i));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
enum KernelBlob {
    Se {
        log_signal_var: f64,
        log_lengthscales: Vec<f64>,
    },
    Mp {
        factors: Vec<MpFactorBlob>,
        input_dim: usize,
    },
    SeMp {
        log_signal_var: f64,
        log_lengthscales: Vec<f64>,
        factors: Vec<MpFactorBlob>,
    },
    Pi {
        basis: String,
        input_dim: usize,
        log_scales: Vec<f64>,
    },
    Sp {
        basis: String,
        input_dim: usize,
        log_scales: Vec<f64>,
        log_signal_var: f64,
        log_lengthscales: Vec<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct MpFactorBlob {
    log_offset: f64,
    log_scales: Vec<f64>,
}

fn kernel_to_blob(kernel: &Kernel) -> Result<KernelBlob, HarnessError> {
    let mp_blob = |mp: &MpKernel| {
        mp.factors()
            .iter()
            .map(|f| MpFactorBlob {
                log_offset: f.log_offset(),
                log_scales: f.log_scales().to_vec(),
            })
            .collect::<Vec<_>>()
    };
    let pi_blob = |pi: &PiKernel| -> Result<(String, Vec<f64>), HarnessError> {
        let name = pi.basis().name();
        if name != "linear" {
            return Err(HarnessError::Format(format!(
                "cannot serialize custom basis {name:?}; only the shipped bases round-trip"
            )));
        }
        Ok((name.to_owned(), pi.log_scales().to_vec()))
    };
    Ok(match kernel {
        Kernel::Se(se) => KernelBlob::Se {
            log_signal_var: se.log_signal_var(),
            log_lengthscales: se.log_lengthscales().to_vec(),
        },
        Kernel::Mp(mp) => KernelBlob::Mp {
            factors: mp_blob(mp),
            input_dim: kernel.input_dim(),
        },
        Kernel::SeMp(se, mp) => KernelBlob::SeMp {
            log_signal_var: se.log_signal_var(),
            log_lengthscales: se.log_lengthscales().to_vec(),
            factors: mp_blob(mp),
        },
        Kernel::Pi(pi) => {
            let (basis, log_scales) = pi_blob(pi)?;
            KernelBlob::Pi {
                basis,
                input_dim: kernel.input_dim(),
                log_scales,
            }
        }
        Kernel::Sp(pi, se) => {
            let (basis, log_scales) = pi_blob(pi)?;
            KernelBlob::Sp {
                basis,
                input_dim: kernel.input_dim(),
                log_scales,
                log_signal_var: se.log_signal_var(),
                log_lengthscales: se.log_lengthscales().to_vec(),
            }
        }
    })
}

fn kernel_from_blob(blob: KernelBlob) -> Result<Kernel, HarnessError> {
    let mk_se = SeKernel::from_log;
    let mk_mp = |factors: Vec<MpFactorBlob>| {
        MpKernel::from_factors(
            factors
                .into_iter()
                .map(|f| MpFactor::from_log(f.log_offset, f.log_scales))
                .collect(),
        )
    };
    let mk_pi = |basis: String, input_dim: usize, log_scales: Vec<f64>| {
        if basis != "linear" {
            return Err(HarnessError::Format(format!("unknown basis {basis:?}")));
        }
        if LinearBasis.output_dim(input_dim) != log_scales.len() {
            return Err(HarnessError::Format("basis dimension mismatch".into()));
        }
        Ok(PiKernel::from_log(Arc::new(LinearBasis), input_dim, log_scales))
    };
    Ok(match blob {
        KernelBlob::Se {
            log_signal_var,
            log_lengthscales,
        } => Kernel::Se(mk_se(log_signal_var, log_lengthscales)),
        KernelBlob::Mp { factors, .. } => Kernel::Mp(mk_mp(factors)),
        KernelBlob::SeMp {
            log_signal_var,
            log_lengthscales,
            factors,
        } => Kernel::SeMp(mk_se(log_signal_var, log_lengthscales), mk_mp(factors)),
        KernelBlob::Pi {
            basis,
            input_dim,
            log_scales,
        } => Kernel::Pi(mk_pi(basis, input_dim, log_scales)?),
        KernelBlob::Sp {
            basis,
            input_dim,
            log_scales,
            log_signal_var,
            log_lengthscales,
        } => Kernel::Sp(
            mk_pi(basis, input_dim, log_scales)?,
            mk_se(log_signal_var, log_lengthscales),
        ),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct GpBlob {
    kernel: KernelBlob,
    log_noise_var: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

/// Self-describing snapshot of a velocity-delta model: kernel variants,
/// hyperparameters, training data, sampling time, and the input map.
/// Deserializing refits deterministically, so posteriors round-trip
/// bit-identically.
#[derive(Debug, Serialize, Deserialize)]
pub struct DeltaModelBlob {
    format: String,
    version: u32,
    ts: f64,
    angle_flags: Vec<bool>,
    gps: Vec<GpBlob>,
}

pub fn model_to_json(model: &DeltaModel) -> Result<String, HarnessError> {
    let gps = model
        .gps()
        .iter()
        .map(|gp| {
            Ok(GpBlob {
                kernel: kernel_to_blob(gp.kernel())?,
                log_noise_var: gp.noise_var().ln(),
                inputs: (0..gp.inputs().rows())
                    .map(|i| gp.inputs().row(i).to_vec())
                    .collect(),
                targets: gp.targets().to_vec(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let blob = DeltaModelBlob {
        format: "gp-delta-model".to_owned(),
        version: 1,
        ts: model.ts(),
        angle_flags: model.encoder().angle_flags().to_vec(),
        gps,
    };
    serde_json::to_string_pretty(&blob).map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<DeltaModel, HarnessError> {
    let blob: DeltaModelBlob =
        serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))?;
    if blob.format != "gp-delta-model" || blob.version != 1 {
        return Err(HarnessError::Format(format!(
            "unsupported model blob {}/{}",
            blob.format, blob.version
        )));
    }
    let gps = blob
        .gps
        .into_iter()
        .map(|g| {
            let kernel = kernel_from_blob(g.kernel)?;
            let mut gp = GpModel::new(
                kernel,
                g.log_noise_var.exp(),
                Mat::from_rows(&g.inputs),
                g.targets,
            );
            gp.fit()
                .map_err(|e| HarnessError::Numeric(format!("refit on load: {e}")))?;
            Ok(Arc::new(gp))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(DeltaModel::new(
        gps,
        blob.ts,
        StateEncoder::new(blob.angle_flags),
    ))
}

/// Self-describing policy snapshot; round-trips every parameter bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyBlob {
    format: String,
    version: u32,
    u_max: Vec<f64>,
    weights: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    log_shape: Vec<f64>,
}

pub fn policy_to_json(policy: &RbfPolicy) -> String {
    let blob = PolicyBlob {
        format: "rbf-policy".to_owned(),
        version: 1,
        u_max: policy.u_max().to_vec(),
        weights: (0..policy.weights().rows())
            .map(|i| policy.weights().row(i).to_vec())
            .collect(),
        centers: (0..policy.centers().rows())
            .map(|i| policy.centers().row(i).to_vec())
            .collect(),
        log_shape: policy.log_shape().to_vec(),
    };
    serde_json::to_string_pretty(&blob).expect("policy serializes")
}

pub fn policy_from_json(text: &str) -> Result<RbfPolicy, HarnessError> {
    let blob: PolicyBlob =
        serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))?;
    if blob.format != "rbf-policy" || blob.version != 1 {
        return Err(HarnessError::Format(format!(
            "unsupported policy blob {}/{}",
            blob.format, blob.version
        )));
    }
    Ok(RbfPolicy::new(
        Mat::from_rows(&blob.weights),
        Mat::from_rows(&blob.centers),
        blob.log_shape,
        blob.u_max,
    ))
}

/// `iter,J_hat,grad_norm,lr` trace of one optimization run.
pub fn trace_to_csv(history: &[pmsrl_core::rollout::IterRecord]) -> String {
    let mut out = String::from("iter,J_hat,grad_norm,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.iter, r.j_hat, r.grad_norm, r.lr);
    }
    out
}

/// Study CSV rows `mode,run,t,p,pdot,theta,thetadot` from per-run state
/// trajectories.
pub fn study_csv(mode_label: &str, runs: &[Vec<State>]) -> String {
    let mut out = String::from("mode,run,t,p,pdot,theta,thetadot\n");
    for (run, states) in runs.iter().enumerate() {
        for (t, s) in states.iter().enumerate() {
            let _ = writeln!(
                out,
                "{mode_label},{run},{t},{},{},{},{}",
                s.q[0], s.qdot[0], s.q[1], s.qdot[1]
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmsrl_core::dynamics::{build_training_set, OfflineFilter};
    use pmsrl_core::gp::KernelChoice;
    use pmsrl_core::rng::Seed;

    fn sample_trajectory() -> Trajectory {
        let mut rng = Seed::new(3).rng();
        let times: Vec<f64> = (0..12).map(|t| t as f64 / 30.0).collect();
        let positions =
            Mat::from_rows(&(0..12).map(|_| vec![rng.normal(), rng.normal()]).collect::<Vec<_>>());
        let controls = Mat::from_rows(&(0..11).map(|_| vec![rng.normal()]).collect::<Vec<_>>());
        Trajectory::new(times, positions, controls).unwrap()
    }

    #[test]
    fn trajectory_csv_roundtrip_is_bit_exact() {
        let traj = sample_trajectory();
        let text = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&text).unwrap();
        assert_eq!(traj, back);
        // and re-emission is byte-identical
        assert_eq!(text, trajectory_to_csv(&back));
    }

    #[test]
    fn trajectory_csv_header_shape() {
        let text = trajectory_to_csv(&sample_trajectory());
        let header = text.lines().next().unwrap();
        assert_eq!(header, "t,q_1,q_2,u_1");
        // last row: empty control cell
        let last = text.lines().last().unwrap();
        assert!(last.ends_with(','));
    }

    #[test]
    fn model_json_roundtrips_posteriors_bit_identically() {
        let mut rng = Seed::new(9).rng();
        let traj = sample_trajectory();
        let encoder = StateEncoder::new(vec![false, true]);
        let set = build_training_set(&[traj], &encoder, &OfflineFilter::central_difference())
            .unwrap();
        let (model, _) =
            DeltaModel::train(KernelChoice::Se, 1.0 / 30.0, encoder, &set, 20, 0.05, None)
                .unwrap();
        let text = model_to_json(&model).unwrap();
        let back = model_from_json(&text).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..model.gps()[0].input_dim())
                .map(|_| rng.uniform_in(-1.0, 1.0))
                .collect();
            for (a, b) in model.gps().iter().zip(back.gps()) {
                let (m1, v1) = a.posterior(&x).unwrap();
                let (m2, v2) = b.posterior(&x).unwrap();
                assert_eq!(m1.to_bits(), m2.to_bits());
                assert_eq!(v1.to_bits(), v2.to_bits());
            }
        }
        // serialized form is stable
        assert_eq!(text, model_to_json(&back).unwrap());
    }

    #[test]
    fn policy_json_roundtrip_exact() {
        let policy = RbfPolicy::initialize(
            &pmsrl_core::policy::PolicyInit {
                n_basis: 5,
                u_max: vec![10.0],
                center_ranges: vec![(-1.0, 1.0); 4],
            },
            &Seed::new(11),
        )
        .unwrap();
        let text = policy_to_json(&policy);
        let back = policy_from_json(&text).unwrap();
        assert_eq!(policy, back);
    }

    #[test]
    fn study_csv_schema_and_rows() {
        let states = vec![vec![State::new(vec![0.1, 0.2], vec![0.3, 0.4]); 4]; 3];
        let text = study_csv("observed", &states);
        assert_eq!(
            text.lines().next().unwrap(),
            "mode,run,t,p,pdot,theta,thetadot"
        );
        assert_eq!(text.lines().count(), 1 + 3 * 4);
        assert_eq!(text.lines().nth(1).unwrap(), "observed,0,0,0.1,0.3,0.2,0.4");
    }
}
