//! Coarse timing of the rollout hot path at harness-like sizes.

use std::sync::Arc;
use std::time::Instant;

use pmsrl_core::dynamics::{DeltaModel, StateEncoder};
use pmsrl_core::envs::CartPoleAngleCost;
use pmsrl_core::gp::{GpModel, Kernel, SeKernel};
use pmsrl_core::linalg::Mat;
use pmsrl_core::observers::{MeasurementModel, ObserverChain, ObserverStage};
use pmsrl_core::policy::{PolicyInit, RbfPolicy};
use pmsrl_core::rng::Seed;
use pmsrl_core::rollout::*;
use pmsrl_core::diff::Tape;

fn model_of_size(n: usize, ts: f64) -> DeltaModel {
    let encoder = StateEncoder::new(vec![false, true]);
    let d_in = encoder.encoded_dim() + 1;
    let mut rng = Seed::new(1).rng();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d_in).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect();
    let gps = (0..2).map(|i| {
        let targets: Vec<f64> = rows.iter().map(|r| 0.2 * (r[i]).sin() + 0.1 * r[d_in-1]).collect();
        let mut gp = GpModel::new(Kernel::Se(SeKernel::new(0.4, &vec![1.2; d_in])), 2e-3, Mat::from_rows(&rows), targets);
        gp.fit().unwrap();
        Arc::new(gp)
    }).collect();
    DeltaModel::new(gps, ts, encoder)
}

fn main() {
    let ts = 1.0 / 30.0;
    for &n in &[88usize, 176, 352] {
        let model = model_of_size(n, ts);
        let policy = RbfPolicy::initialize(&PolicyInit {
            n_basis: 200, u_max: vec![10.0],
            center_ranges: vec![(-1.0,1.0),(-3.0,3.0),(-10.0,10.0),(-1.0,1.0),(-1.0,1.0)],
        }, &Seed::new(2)).unwrap();
        let cfg = RolloutConfig {
            horizon: 90, particles: 50, mode: Mode::ObservedState,
            cost: Box::new(CartPoleAngleCost::default()),
            init: InitialStateDist::gaussian(&[0.0;4], &[0.01;4]),
            measurement: MeasurementModel::new(vec![3e-3;2]),
            observer: ObserverChain::new(ts, vec![ObserverStage::CausalDiff, ObserverStage::LowPass{alpha:0.5}]).unwrap(),
        };
        let seed = Seed::new(3);

        let t0 = Instant::now();
        let reps = 5;
        for r in 0..reps {
            let (_j, _) = simulate_particles(&cfg, &model, &policy, &seed.child(r)).unwrap();
        }
        let plain = t0.elapsed().as_secs_f64() / reps as f64;

        let mut tape = Tape::new();
        // forward graph build only
        let t0 = Instant::now();
        for r in 0..reps {
            tape.clear();
            let params = policy.lift_params(&tape);
            let _ = simulate_particles_var(&tape, &cfg, &model, &policy, &params, &seed.child(r)).unwrap();
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;

        let t0 = Instant::now();
        for r in 0..reps {
            let _ = policy_gradient_on(&mut tape, &cfg, &model, &policy, &seed.child(r)).unwrap();
        }
        let full = t0.elapsed().as_secs_f64() / reps as f64;

        println!("n={n:4}: plain {plain:.3}s  fwd(graph) {fwd:.3}s  fwd+rev {full:.3}s  nodes {}", tape.len());
    }
}
