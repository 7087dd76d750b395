//! Minimal dense linear algebra: row-major matrices, Cholesky factorization,
//! and triangular solves, sized for Gram matrices of a few hundred rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with four running accumulators; the split dependency chains
/// keep the loop throughput-bound rather than add-latency-bound.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += xa * xb;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Pairwise (cascade) summation; serial and chunked reductions of the same
/// slice agree to the last bit, which the rollout cost averaging relies on.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// In-place lower Cholesky factorization of a symmetric positive-definite
/// matrix. Only the lower triangle of the input is read; on success the lower
/// triangle holds L and the strict upper triangle is zeroed. Returns the
/// failing pivot index on breakdown.
pub fn cholesky_in_place(a: &mut Mat) -> Result<(), usize> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    for j in 0..n {
        let mut d = a.at(j, j) - dot(&a.row(j)[..j], &a.row(j)[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        d = fmath::sqrt(d);
        a.set(j, j, d);
        let inv_d = 1.0 / d;
        for i in j + 1..n {
            let s = {
                let (rj, ri) = (a.row(j), a.row(i));
                dot(&ri[..j], &rj[..j])
            };
            a.set(i, j, (a.at(i, j) - s) * inv_d);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            a.set(i, j, 0.0);
        }
    }
    Ok(())
}

/// Solves L x = b for lower-triangular L.
pub fn solve_lower(l: &Mat, b: &[f64], x: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &x[..i]);
        x[i] = (b[i] - s) / l.at(i, i);
    }
}

/// Solves L^T x = b for lower-triangular L.
pub fn solve_lower_transpose(l: &Mat, b: &[f64], x: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.at(k, i) * x[k];
        }
        x[i] = s / l.at(i, i);
    }
}

/// Solves (L L^T) x = b.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    let mut x = vec![0.0; n];
    solve_lower(l, b, &mut y);
    solve_lower_transpose(l, &y, &mut x);
    x
}

/// Inverse of L L^T from its Cholesky factor, symmetrized.
pub fn invert_from_cholesky(l: &Mat) -> Mat {
    let n = l.rows();
    let mut inv = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    // enforce exact symmetry
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (inv.at(i, j) + inv.at(j, i));
            inv.set(i, j, s);
            inv.set(j, i, s);
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn random_spd(n: usize, seed: u64) -> Mat {
        let mut rng = Seed::new(seed).rng();
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, rng.normal());
            }
        }
        // A A^T + n I is comfortably positive definite
        let mut spd = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                spd.set(i, j, dot(a.row(i), a.row(j)));
            }
            spd.add_to(i, i, n as f64);
        }
        spd
    }

    #[test]
    fn cholesky_reconstructs() {
        let spd = random_spd(7, 11);
        let mut l = spd.clone();
        cholesky_in_place(&mut l).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let rec = dot(&l.row(i)[..=i.min(j)], &l.row(j)[..=i.min(j)]);
                assert!((rec - spd.at(i, j)).abs() < 1e-10 * spd.trace());
            }
        }
    }

    #[test]
    fn cholesky_solve_matches_nalgebra() {
        let spd = random_spd(6, 3);
        let mut rng = Seed::new(4).rng();
        let b: Vec<f64> = (0..6).map(|_| rng.normal()).collect();

        let mut l = spd.clone();
        cholesky_in_place(&mut l).unwrap();
        let x = cholesky_solve(&l, &b);

        let na = nalgebra::DMatrix::from_fn(6, 6, |i, j| spd.at(i, j));
        let nb = nalgebra::DVector::from_column_slice(&b);
        let nx = na.clone().lu().solve(&nb).unwrap();
        for i in 0..6 {
            assert!((x[i] - nx[i]).abs() < 1e-9, "{} vs {}", x[i], nx[i]);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(cholesky_in_place(&mut m), Err(1));
    }

    #[test]
    fn inverse_from_cholesky_is_inverse() {
        let spd = random_spd(5, 8);
        let mut l = spd.clone();
        cholesky_in_place(&mut l).unwrap();
        let inv = invert_from_cholesky(&l);
        for i in 0..5 {
            for j in 0..5 {
                let prod = dot(spd.row(i), inv.row(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod - expect).abs() < 1e-10, "({i},{j}) {prod}");
            }
        }
    }

    #[test]
    fn pairwise_sum_matches_serial_on_benign_data() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let serial: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - serial).abs() < 1e-9);
    }

    #[test]
    fn dot_handles_tails() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 2.0, 2.0, 2.0, 2.0];
        assert_eq!(dot(&a, &b), 30.0);
    }
}
