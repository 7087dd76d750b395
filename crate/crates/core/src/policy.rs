//! Squashed RBF-network policy: a sum of Gaussian basis functions passed
//! through a scaled `tanh`, so outputs stay strictly inside the actuation
//! bounds.
//!
//! For output `j`:
//! `u_j = u_max_j * tanh( (1/u_max_j) * sum_i w_ij exp(-(a_i - z)^T S^{-1} (a_i - z)) )`
//! with diagonal shape matrix `S` kept in log space. All of `{w, A, log S}`
//! are trainable.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::diff::{CustomOp, OpId, Tape, Var};
use crate::fmath;
use crate::linalg::Mat;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyError {
    ParamLengthMismatch { expected: usize, got: usize },
    EmptyCenterRange { dim: usize },
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::ParamLengthMismatch { expected, got } => {
                write!(f, "parameter vector length {got}, expected {expected}")
            }
            PolicyError::EmptyCenterRange { dim } => {
                write!(f, "center range for input dimension {dim} is empty")
            }
        }
    }
}

/// Trainable squashed-RBF policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfPolicy {
    /// `n_basis x d_u` weights.
    weights: Mat,
    /// `n_basis x d_z` centers.
    centers: Mat,
    /// Log of the diagonal shape entries, length `d_z`.
    log_shape: Vec<f64>,
    /// Saturation bound per output.
    u_max: Vec<f64>,
}

/// Initialization spec: centers drawn uniformly from per-dimension ranges,
/// weights from `N(0, (u_max/10)^2)`, shape entries `(range width / 2)^2`.
#[derive(Debug, Clone)]
pub struct PolicyInit {
    pub n_basis: usize,
    pub u_max: Vec<f64>,
    pub center_ranges: Vec<(f64, f64)>,
}

impl RbfPolicy {
    pub fn new(weights: Mat, centers: Mat, log_shape: Vec<f64>, u_max: Vec<f64>) -> Self {
        assert_eq!(weights.rows(), centers.rows(), "one weight row per basis");
        assert_eq!(centers.cols(), log_shape.len());
        assert_eq!(weights.cols(), u_max.len());
        RbfPolicy {
            weights,
            centers,
            log_shape,
            u_max,
        }
    }

    pub fn initialize(init: &PolicyInit, seed: &Seed) -> Result<Self, PolicyError> {
        let d_z = init.center_ranges.len();
        let d_u = init.u_max.len();
        for (dim, (lo, hi)) in init.center_ranges.iter().enumerate() {
            if !(hi > lo) {
                return Err(PolicyError::EmptyCenterRange { dim });
            }
        }
        let mut rng = seed.rng();
        let mut centers = Mat::zeros(init.n_basis, d_z);
        for i in 0..init.n_basis {
            for j in 0..d_z {
                let (lo, hi) = init.center_ranges[j];
                centers.set(i, j, rng.uniform_in(lo, hi));
            }
        }
        let mut weights = Mat::zeros(init.n_basis, d_u);
        for i in 0..init.n_basis {
            for j in 0..d_u {
                weights.set(i, j, rng.normal() * init.u_max[j] / 10.0);
            }
        }
        let log_shape = init
            .center_ranges
            .iter()
            .map(|(lo, hi)| {
                let half = 0.5 * (hi - lo);
                fmath::ln(half * half)
            })
            .collect();
        Ok(RbfPolicy::new(weights, centers, log_shape, init.u_max.clone()))
    }

    pub fn n_basis(&self) -> usize {
        self.centers.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.u_max.len()
    }

    pub fn u_max(&self) -> &[f64] {
        &self.u_max
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn centers(&self) -> &Mat {
        &self.centers
    }

    pub fn log_shape(&self) -> &[f64] {
        &self.log_shape
    }

    /// `n_b * d_u + n_b * d_z + d_z`.
    pub fn param_len(&self) -> usize {
        self.weights.rows() * self.weights.cols()
            + self.centers.rows() * self.centers.cols()
            + self.log_shape.len()
    }

    /// Fixed flattening order: `w` row-major, `A` row-major, then the log
    /// shape entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        out.extend_from_slice(self.weights.data());
        out.extend_from_slice(self.centers.data());
        out.extend_from_slice(&self.log_shape);
        out
    }

    pub fn unflatten_into(&mut self, params: &[f64]) -> Result<(), PolicyError> {
        if params.len() != self.param_len() {
            return Err(PolicyError::ParamLengthMismatch {
                expected: self.param_len(),
                got: params.len(),
            });
        }
        let nw = self.weights.rows() * self.weights.cols();
        let nc = self.centers.rows() * self.centers.cols();
        self.weights = Mat::from_vec(
            self.weights.rows(),
            self.weights.cols(),
            params[..nw].to_vec(),
        );
        self.centers = Mat::from_vec(
            self.centers.rows(),
            self.centers.cols(),
            params[nw..nw + nc].to_vec(),
        );
        self.log_shape.copy_from_slice(&params[nw + nc..]);
        Ok(())
    }

    fn basis_activations(&self, z: &[f64], out: &mut [f64]) {
        let d_z = self.input_dim();
        for (i, e) in out.iter_mut().enumerate() {
            let mut dist = 0.0;
            let a = self.centers.row(i);
            for j in 0..d_z {
                let diff = a[j] - z[j];
                dist += diff * diff * fmath::exp(-self.log_shape[j]);
            }
            *e = fmath::exp(-dist);
        }
    }

    /// Plain evaluation.
    pub fn evaluate(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.input_dim());
        let n_b = self.n_basis();
        let mut e = vec![0.0; n_b];
        self.basis_activations(z, &mut e);
        (0..self.output_dim())
            .map(|j| {
                let s: f64 = (0..n_b).map(|i| self.weights.at(i, j) * e[i]).sum();
                self.u_max[j] * fmath::tanh(s / self.u_max[j])
            })
            .collect()
    }

    /// Registers the fused RBF-sum ops (one per output) for tape evaluation.
    pub fn register_ops(&self, tape: &Tape) -> Vec<OpId> {
        (0..self.output_dim())
            .map(|j| {
                tape.register_op(Rc::new(RbfSumOp {
                    n_basis: self.n_basis(),
                    d_z: self.input_dim(),
                    output: j,
                    d_u: self.output_dim(),
                }))
            })
            .collect()
    }

    /// Lifts the flattened parameters onto the tape as tracked leaves.
    pub fn lift_params<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        tape.vars(&self.flatten())
    }

    /// Tape evaluation against lifted parameters; differentiable in both the
    /// parameters and the input.
    pub fn evaluate_var<'t>(
        &self,
        tape: &'t Tape,
        ops: &[OpId],
        params: &[Var<'t>],
        z: &[Var<'t>],
    ) -> Vec<Var<'t>> {
        debug_assert_eq!(params.len(), self.param_len());
        debug_assert_eq!(z.len(), self.input_dim());
        let mut parents: Vec<Var<'t>> = Vec::with_capacity(params.len() + z.len());
        parents.extend_from_slice(z);
        parents.extend_from_slice(params);
        (0..self.output_dim())
            .map(|j| {
                let s = tape.custom(ops[j], &parents, 0.0);
                let scaled = s * (1.0 / self.u_max[j]);
                scaled.tanh() * self.u_max[j]
            })
            .collect()
    }
}

/// Fused node computing `sum_i w_ij exp(-(a_i - z)^T S^{-1} (a_i - z))` for
/// one output `j`. Parents are `[z, w row-major, A row-major, log S]`, i.e.
/// the input followed by the policy's flattened parameters.
struct RbfSumOp {
    n_basis: usize,
    d_z: usize,
    output: usize,
    d_u: usize,
}

impl RbfSumOp {
    #[inline]
    fn split<'a>(&self, parents: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (z, rest) = parents.split_at(self.d_z);
        let (w, rest) = rest.split_at(self.n_basis * self.d_u);
        let (a, ls) = rest.split_at(self.n_basis * self.d_z);
        (z, w, a, ls)
    }
}

impl CustomOp for RbfSumOp {
    fn name(&self) -> &'static str {
        "rbf_sum"
    }

    fn arity(&self) -> usize {
        self.d_z + self.n_basis * self.d_u + self.n_basis * self.d_z + self.d_z
    }

    // cache: the basis activations e_i
    fn cache_len(&self) -> usize {
        self.n_basis
    }

    fn forward(&self, _payload: f64, parents: &[f64], cache: &mut [f64]) -> f64 {
        let (z, w, a, ls) = self.split(parents);
        let mut inv_shape = [0.0f64; 16];
        let inv_shape = &mut inv_shape[..self.d_z.min(16)];
        if inv_shape.len() == self.d_z {
            for (s, &l) in inv_shape.iter_mut().zip(ls) {
                *s = fmath::exp(-l);
            }
        }
        let mut out = 0.0;
        for i in 0..self.n_basis {
            let ai = &a[i * self.d_z..(i + 1) * self.d_z];
            let mut dist = 0.0;
            if inv_shape.len() == self.d_z {
                for j in 0..self.d_z {
                    let diff = ai[j] - z[j];
                    dist += diff * diff * inv_shape[j];
                }
            } else {
                for j in 0..self.d_z {
                    let diff = ai[j] - z[j];
                    dist += diff * diff * fmath::exp(-ls[j]);
                }
            }
            let e = fmath::exp(-dist);
            cache[i] = e;
            out += w[i * self.d_u + self.output] * e;
        }
        out
    }

    fn backward(
        &self,
        _payload: f64,
        parents: &[f64],
        _value: f64,
        out_adj: f64,
        cache: &[f64],
        parent_adj: &mut [f64],
    ) {
        let (z, w, a, ls) = self.split(parents);
        let z_off = 0;
        let w_off = self.d_z;
        let a_off = w_off + self.n_basis * self.d_u;
        let ls_off = a_off + self.n_basis * self.d_z;
        let mut inv_shape = [0.0f64; 16];
        let small = self.d_z <= 16;
        if small {
            for (s, &l) in inv_shape[..self.d_z].iter_mut().zip(ls) {
                *s = fmath::exp(-l);
            }
        }
        for i in 0..self.n_basis {
            let e = cache[i];
            let wi = w[i * self.d_u + self.output];
            // d out / d w_ij = e_i
            parent_adj[w_off + i * self.d_u + self.output] += out_adj * e;
            let g = out_adj * wi * e;
            let ai = &a[i * self.d_z..(i + 1) * self.d_z];
            for j in 0..self.d_z {
                let diff = ai[j] - z[j];
                let inv_s = if small { inv_shape[j] } else { fmath::exp(-ls[j]) };
                // exponent -(a - z)^2 / s: d/dz = +2 diff / s, d/da = -2 diff / s,
                // d/d log s = + diff^2 / s
                parent_adj[z_off + j] += g * 2.0 * diff * inv_s;
                parent_adj[a_off + i * self.d_z + j] -= g * 2.0 * diff * inv_s;
                parent_adj[ls_off + j] += g * diff * diff * inv_s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{central_difference, relative_error};

    fn small_policy() -> RbfPolicy {
        RbfPolicy::initialize(
            &PolicyInit {
                n_basis: 3,
                u_max: vec![10.0, 5.0],
                center_ranges: vec![(-1.0, 1.0), (-2.0, 2.0)],
            },
            &Seed::new(7),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = small_policy();
        let zeros = vec![0.0; p.weights().rows() * p.weights().cols()];
        let mut flat = p.flatten();
        flat[..zeros.len()].copy_from_slice(&zeros);
        p.unflatten_into(&flat).unwrap();
        let u = p.evaluate(&[0.3, -0.7]);
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn saturation_stays_strictly_inside_bounds() {
        // tanh is open-range, so the output sits strictly below the bound
        // (for |s| beyond ~19 u_max the f64 rounding of tanh reaches 1.0
        // exactly, so probe the deep-but-representable part of the tail)
        let p = RbfPolicy::new(
            Mat::from_rows(&[vec![100.0]]),
            Mat::from_rows(&[vec![0.0]]),
            vec![0.0],
            vec![10.0],
        );
        let u = p.evaluate(&[0.0]);
        assert!(u[0] < 10.0 && u[0] > 9.99999);
    }

    #[test]
    fn single_basis_hand_value() {
        // w = 1, center at z, unit shape, u_max = 10: u = 10 tanh(0.1)
        let p = RbfPolicy::new(
            Mat::from_rows(&[vec![1.0]]),
            Mat::from_rows(&[vec![0.2, -0.4]]),
            vec![0.0, 0.0],
            vec![10.0],
        );
        let u = p.evaluate(&[0.2, -0.4]);
        assert!((u[0] - 10.0 * fmath::tanh(0.1)).abs() < 1e-12);
        assert!((u[0] - 0.99668).abs() < 1e-5);
    }

    #[test]
    fn initialize_is_deterministic_and_bounded() {
        let init = PolicyInit {
            n_basis: 50,
            u_max: vec![10.0],
            center_ranges: vec![(-1.0, 1.0), (-3.0, 3.0)],
        };
        let a = RbfPolicy::initialize(&init, &Seed::new(3)).unwrap();
        let b = RbfPolicy::initialize(&init, &Seed::new(3)).unwrap();
        assert_eq!(a, b);
        for i in 0..50 {
            assert!(a.centers().at(i, 0).abs() <= 1.0);
            assert!(a.centers().at(i, 1).abs() <= 3.0);
        }
        let mut rng = Seed::new(11).rng();
        for _ in 0..100 {
            let z = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-4.0, 4.0)];
            let u = a.evaluate(&z);
            assert!(u[0].abs() < 10.0);
        }
    }

    #[test]
    fn empty_center_range_rejected() {
        let init = PolicyInit {
            n_basis: 2,
            u_max: vec![1.0],
            center_ranges: vec![(1.0, 1.0)],
        };
        assert!(matches!(
            RbfPolicy::initialize(&init, &Seed::new(1)),
            Err(PolicyError::EmptyCenterRange { dim: 0 })
        ));
    }

    #[test]
    fn flatten_roundtrip_and_length() {
        let p = small_policy();
        assert_eq!(p.param_len(), 3 * 2 + 3 * 2 + 2);
        let flat = p.flatten();
        let mut q = small_policy();
        q.unflatten_into(&flat).unwrap();
        assert_eq!(p, q);
        // perturbing one entry changes exactly one field element
        let mut flat2 = flat.clone();
        flat2[7] += 1.0; // inside the centers block
        q.unflatten_into(&flat2).unwrap();
        assert_eq!(q.weights(), p.weights());
        assert_eq!(q.log_shape(), p.log_shape());
        assert_ne!(q.centers(), p.centers());
    }

    #[test]
    fn wrong_param_length_rejected() {
        let mut p = small_policy();
        assert!(matches!(
            p.unflatten_into(&[0.0; 3]),
            Err(PolicyError::ParamLengthMismatch { .. })
        ));
    }

    #[test]
    fn var_evaluation_matches_plain() {
        let p = small_policy();
        let z = [0.4, -1.2];
        let plain = p.evaluate(&z);
        let tape = Tape::new();
        let ops = p.register_ops(&tape);
        let params = p.lift_params(&tape);
        let zv = tape.vars(&z);
        let u = p.evaluate_var(&tape, &ops, &params, &zv);
        for (uv, pv) in u.iter().zip(&plain) {
            assert!((uv.value() - pv).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_wrt_params_and_input_matches_fd() {
        let p = small_policy();
        let z0 = [0.4, -1.2];
        // differentiate sum of outputs wrt [params, z]
        let mut at = p.flatten();
        at.extend_from_slice(&z0);
        let n_p = p.param_len();

        let tape = Tape::new();
        let ops = p.register_ops(&tape);
        let all = tape.vars(&at);
        let u = p.evaluate_var(&tape, &ops, &all[..n_p], &all[n_p..]);
        let y = tape.sum(&u);
        let grads = tape.reverse(y);
        let g = grads.wrt_all(&all);

        let fd = central_difference(
            |x| {
                let mut pol = p.clone();
                pol.unflatten_into(&x[..n_p]).unwrap();
                pol.evaluate(&x[n_p..]).iter().sum()
            },
            &at,
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-5, "{g:?}\n{fd:?}");
    }

    #[test]
    fn output_is_continuous_in_input() {
        let p = small_policy();
        let z = [0.1, 0.5];
        let u0 = p.evaluate(&z);
        let mut delta = 1e-3;
        let mut last = f64::INFINITY;
        for _ in 0..6 {
            let u1 = p.evaluate(&[z[0] + delta, z[1]]);
            let change = (u1[0] - u0[0]).abs() + (u1[1] - u0[1]).abs();
            assert!(change < last);
            last = change;
            delta *= 0.1;
        }
        assert!(last < 1e-6);
    }
}
