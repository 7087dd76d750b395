//! Posterior equivalence against an independent dense-formula oracle.
//!
//! The library computes posteriors through a cached Cholesky factorization
//! and precision matrix; the oracle here solves the dense system
//! `(K + sigma^2 I) alpha = y` with nalgebra's LU decomposition straight from
//! the textbook formulas. Every kernel variant must agree to near machine
//! precision.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pmsrl_core::gp::{
    GpModel, Kernel, LinearBasis, MpKernel, PiKernel, SeKernel,
};
use pmsrl_core::linalg::Mat;
use pmsrl_core::rng::Seed;

fn kernel_variants(dim: usize) -> Vec<Kernel> {
    vec![
        Kernel::Se(SeKernel::new(1.2, &vec![0.9; dim])),
        Kernel::Mp(MpKernel::new(2, dim, 0.8, 0.5)),
        Kernel::SeMp(
            SeKernel::new(0.7, &vec![1.4; dim]),
            MpKernel::new(2, dim, 1.0, 0.3),
        ),
        Kernel::Pi(PiKernel::new(Arc::new(LinearBasis), dim, 0.6)),
        Kernel::Sp(
            PiKernel::new(Arc::new(LinearBasis), dim, 0.4),
            SeKernel::new(1.0, &vec![1.1; dim]),
        ),
    ]
}

fn dense_oracle(kernel: &Kernel, noise: f64, x: &Mat, y: &[f64], q: &[f64]) -> (f64, f64) {
    let n = x.rows();
    // the model's documented regularization: noise plus the first-rung
    // jitter 1e-10 * trace / n
    let trace: f64 = (0..n).map(|i| kernel.eval(x.row(i), x.row(i))).sum();
    let jitter = 1e-10 * trace / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(x.row(i), x.row(j)))
        + DMatrix::identity(n, n) * (noise + jitter);
    let kq = DVector::from_fn(n, |i, _| kernel.eval(q, x.row(i)));
    let lu = k.lu();
    let alpha = lu.solve(&DVector::from_column_slice(y)).expect("solvable");
    let mean = kq.dot(&alpha);
    let kk = lu.solve(&kq).expect("solvable");
    let var = kernel.eval(q, q) - kq.dot(&kk);
    (mean, var)
}

#[test]
fn posterior_matches_dense_formula_for_all_kernels() {
    let dim = 3;
    let mut worst: f64 = 0.0;
    for dataset in 0..50 {
        let mut rng = Seed::new(1000 + dataset).rng();
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..dim).map(|_| rng.uniform_in(-1.5, 1.5)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (r[0] * 1.3).sin() + 0.5 * r[1] * r[2] + 0.05 * rng.normal())
            .collect();
        let inputs = Mat::from_rows(&rows);
        let noise = 0.01;

        for kernel in kernel_variants(dim) {
            let mut model = GpModel::new(kernel.clone(), noise, inputs.clone(), y.clone());
            model.fit().unwrap();
            for _ in 0..4 {
                let q: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
                let (mean, var) = model.posterior(&q).unwrap();
                let (mean_o, var_o) = dense_oracle(&kernel, noise, &inputs, &y, &q);
                let em = (mean - mean_o).abs() / mean_o.abs().max(1e-3);
                let ev = (var - var_o).abs() / var_o.abs().max(1e-3);
                worst = worst.max(em).max(ev);
                assert!(
                    em < 1e-8 && ev < 1e-8,
                    "{} dataset {dataset}: mean {mean} vs {mean_o}, var {var} vs {var_o}",
                    kernel.variant_name()
                );
            }
        }
    }
    println!("worst relative deviation from dense oracle: {worst:.3e}");
}

#[test]
fn gram_matrices_stay_psd_after_jitter() {
    for trial in 0..10 {
        let mut rng = Seed::new(7 + trial).rng();
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            .collect();
        let inputs = Mat::from_rows(&rows);
        for kernel in kernel_variants(3) {
            let n = inputs.rows();
            let trace: f64 = (0..n).map(|i| kernel.eval(inputs.row(i), inputs.row(i))).sum();
            let jitter = 1e-10 * trace / n as f64;
            let gram = DMatrix::from_fn(n, n, |i, j| {
                kernel.eval(inputs.row(i), inputs.row(j)) + if i == j { jitter } else { 0.0 }
            });
            let eig = gram.symmetric_eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= -1e-8 * trace,
                "{}: min eig {min}, trace {trace}",
                kernel.variant_name()
            );
        }
    }
}

#[test]
fn serialization_fields_reproduce_posteriors_exactly() {
    // round-tripping a model through its raw fields (what the file format
    // stores) and refitting must give bit-identical posteriors
    let mut rng = Seed::new(77).rng();
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] - r[1] * r[1]).collect();
    let mut model = GpModel::new(
        Kernel::Se(SeKernel::new(0.9, &[1.0, 0.8])),
        0.02,
        Mat::from_rows(&rows),
        y,
    );
    model.fit().unwrap();

    let mut clone = GpModel::new(
        model.kernel().clone(),
        model.noise_var(),
        model.inputs().clone(),
        model.targets().to_vec(),
    );
    clone.fit().unwrap();

    for _ in 0..20 {
        let q = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let (m1, v1) = model.posterior(&q).unwrap();
        let (m2, v2) = clone.posterior(&q).unwrap();
        assert_eq!(m1.to_bits(), m2.to_bits());
        assert_eq!(v1.to_bits(), v2.to_bits());
    }
}
