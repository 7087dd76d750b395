use std::time::Instant;
use pmsrl_core::linalg::{dot, Mat};
use pmsrl_core::rng::Seed;

fn main() {
    let n = 352;
    let mut rng = Seed::new(1).rng();
    let b = Mat::from_vec(n, n, (0..n*n).map(|_| rng.normal()).collect());
    let k: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut out = vec![0.0; n];
    let reps = 20000;
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        b.matvec(&k, &mut out);
        sink += out[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (n * n) as f64 * reps as f64;
    println!("matvec {n}: {:.2} GFLOP/s (sink {sink:.1})", flops / dt / 1e9);

    // plain dot
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps * n {
        sink += dot(&k, &b.row(7));
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("dot {n}: {:.2} GFLOP/s (sink {sink:.1})", 2.0 * n as f64 * (reps * n) as f64 / dt / 1e9);
}
