//! Covariance functions: squared-exponential, multiplicative-polynomial,
//! their sum, and the physically-inspired / semi-parametric linear kernels on
//! user basis functions.
//!
//! All strictly-positive hyperparameters are stored as logarithms, so any
//! parameter vector is feasible and positivity never needs a constraint. The
//! linear-space values are cached alongside and rebuilt on every parameter
//! update; kernel evaluations sit in the innermost loops of both fitting and
//! rollouts, where per-call `exp` on the hyperparameters would dominate the
//! runtime.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Basis-function map for the physically-inspired kernel. Implementations
/// must be smooth; the jacobian is consumed when gradients flow through
/// posterior samples.
pub trait BasisFn: Send + Sync {
    fn name(&self) -> &'static str;
    fn output_dim(&self, input_dim: usize) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `output_dim x input_dim` jacobian `d phi_j / d x_i`.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
}

/// The shipped example basis: the identity map, making the PI kernel a plain
/// weighted linear kernel on the inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearBasis;

impl BasisFn for LinearBasis {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn output_dim(&self, input_dim: usize) -> usize {
        input_dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            out[j * d + j] = 1.0;
        }
    }
}

/// Squared-exponential kernel `sv * exp(-sum_i (a_i-b_i)^2 / L_i)` with
/// signal variance `sv` and per-dimension lengthscales `L_i`.
#[derive(Debug, Clone)]
pub struct SeKernel {
    log_signal_var: f64,
    log_lengthscales: Vec<f64>,
    signal_var: f64,
    inv_lengthscales: Vec<f64>,
}

impl SeKernel {
    pub fn new(signal_var: f64, lengthscales: &[f64]) -> Self {
        Self::from_log(
            fmath::ln(signal_var),
            lengthscales.iter().map(|&l| fmath::ln(l)).collect(),
        )
    }

    pub fn from_log(log_signal_var: f64, log_lengthscales: Vec<f64>) -> Self {
        let mut k = SeKernel {
            log_signal_var,
            log_lengthscales,
            signal_var: 0.0,
            inv_lengthscales: Vec::new(),
        };
        k.rebuild();
        k
    }

    pub fn isotropic(signal_var: f64, lengthscale: f64, dim: usize) -> Self {
        SeKernel::new(signal_var, &vec![lengthscale; dim])
    }

    pub fn log_signal_var(&self) -> f64 {
        self.log_signal_var
    }

    pub fn log_lengthscales(&self) -> &[f64] {
        &self.log_lengthscales
    }

    fn rebuild(&mut self) {
        self.signal_var = fmath::exp(self.log_signal_var);
        self.inv_lengthscales = self
            .log_lengthscales
            .iter()
            .map(|&l| fmath::exp(-l))
            .collect();
    }

    fn set_logs(&mut self, p: &[f64]) {
        self.log_signal_var = p[0];
        self.log_lengthscales.copy_from_slice(&p[1..]);
        self.rebuild();
    }

    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((&ai, &bi), &il) in a.iter().zip(b).zip(&self.inv_lengthscales) {
            let d = ai - bi;
            s += d * d * il;
        }
        self.signal_var * fmath::exp(-s)
    }
}

/// One factor `sigma^2 + a^T diag(s) b` of the multiplicative polynomial
/// kernel.
#[derive(Debug, Clone)]
pub struct MpFactor {
    log_offset: f64,
    log_scales: Vec<f64>,
    offset: f64,
    scales: Vec<f64>,
}

impl MpFactor {
    pub fn from_log(log_offset: f64, log_scales: Vec<f64>) -> Self {
        let mut f = MpFactor {
            log_offset,
            log_scales,
            offset: 0.0,
            scales: Vec::new(),
        };
        f.rebuild();
        f
    }

    pub fn log_offset(&self) -> f64 {
        self.log_offset
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    fn rebuild(&mut self) {
        self.offset = fmath::exp(self.log_offset);
        self.scales = self.log_scales.iter().map(|&l| fmath::exp(l)).collect();
    }
}

/// Multiplicative polynomial kernel of degree `factors.len()`: the product of
/// that many linear kernels, each with its own offset and diagonal scale.
#[derive(Debug, Clone)]
pub struct MpKernel {
    factors: Vec<MpFactor>,
}

impl MpKernel {
    /// Degree-`degree` kernel with shared `offset` and isotropic `scale`.
    pub fn new(degree: usize, input_dim: usize, offset: f64, scale: f64) -> Self {
        Self::with_dim_scales(degree, offset, &vec![scale; input_dim])
    }

    /// Degree-`degree` kernel with shared `offset` and per-dimension scales.
    pub fn with_dim_scales(degree: usize, offset: f64, scales: &[f64]) -> Self {
        MpKernel {
            factors: (0..degree)
                .map(|_| {
                    MpFactor::from_log(
                        fmath::ln(offset),
                        scales.iter().map(|&s| fmath::ln(s)).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn from_factors(factors: Vec<MpFactor>) -> Self {
        assert!(!factors.is_empty());
        MpKernel { factors }
    }

    pub fn factors(&self) -> &[MpFactor] {
        &self.factors
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    fn factor(&self, r: usize, a: &[f64], b: &[f64]) -> f64 {
        let f = &self.factors[r];
        let mut s = f.offset;
        for ((&ai, &bi), &sc) in a.iter().zip(b).zip(&f.scales) {
            s += ai * bi * sc;
        }
        s
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.factors.len())
            .map(|r| self.factor(r, a, b))
            .product()
    }

    /// Leave-one-out products `prod_{s != r} f_s`.
    fn loo_products(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let deg = self.factors.len();
        let f: Vec<f64> = (0..deg).map(|r| self.factor(r, a, b)).collect();
        let mut pre = vec![1.0; deg + 1];
        for r in 0..deg {
            pre[r + 1] = pre[r] * f[r];
        }
        let mut suf = vec![1.0; deg + 1];
        for r in (0..deg).rev() {
            suf[r] = suf[r + 1] * f[r];
        }
        (0..deg).map(|r| pre[r] * suf[r + 1]).collect()
    }
}

/// Linear kernel on basis functions: `phi(a)^T diag(s) phi(b)`.
#[derive(Clone)]
pub struct PiKernel {
    basis: Arc<dyn BasisFn>,
    log_scales: Vec<f64>,
    scales: Vec<f64>,
    input_dim: usize,
}

impl PiKernel {
    pub fn new(basis: Arc<dyn BasisFn>, input_dim: usize, scale: f64) -> Self {
        let d_phi = basis.output_dim(input_dim);
        Self::from_log(basis, input_dim, vec![fmath::ln(scale); d_phi])
    }

    pub fn from_log(basis: Arc<dyn BasisFn>, input_dim: usize, log_scales: Vec<f64>) -> Self {
        assert_eq!(basis.output_dim(input_dim), log_scales.len());
        let scales = log_scales.iter().map(|&l| fmath::exp(l)).collect();
        PiKernel {
            basis,
            log_scales,
            scales,
            input_dim,
        }
    }

    pub fn basis(&self) -> &Arc<dyn BasisFn> {
        &self.basis
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    fn set_logs(&mut self, p: &[f64]) {
        self.log_scales.copy_from_slice(p);
        self.scales = p.iter().map(|&l| fmath::exp(l)).collect();
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d_phi = self.log_scales.len();
        let mut pa = vec![0.0; d_phi];
        let mut pb = vec![0.0; d_phi];
        self.basis.eval(a, &mut pa);
        self.basis.eval(b, &mut pb);
        pa.iter()
            .zip(&pb)
            .zip(&self.scales)
            .map(|((&x, &y), &s)| x * y * s)
            .sum()
    }
}

impl core::fmt::Debug for PiKernel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PiKernel")
            .field("basis", &self.basis.name())
            .field("log_scales", &self.log_scales)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

/// Kernel variants available to the GP models.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// Squared exponential.
    Se(SeKernel),
    /// Multiplicative polynomial of some degree.
    Mp(MpKernel),
    /// Sum of squared exponential and multiplicative polynomial.
    SeMp(SeKernel, MpKernel),
    /// Physically-inspired linear kernel on basis functions.
    Pi(PiKernel),
    /// Semi-parametric: physically-inspired plus squared exponential.
    Sp(PiKernel, SeKernel),
}

impl Kernel {
    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::Se(se) => se.log_lengthscales.len(),
            Kernel::Mp(mp) => mp.factors[0].log_scales.len(),
            Kernel::SeMp(se, _) => se.log_lengthscales.len(),
            Kernel::Pi(pi) => pi.input_dim,
            Kernel::Sp(pi, _) => pi.input_dim,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Kernel::Se(_) => "se",
            Kernel::Mp(_) => "mp",
            Kernel::SeMp(..) => "se+mp",
            Kernel::Pi(_) => "pi",
            Kernel::Sp(..) => "sp",
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.input_dim());
        debug_assert_eq!(b.len(), self.input_dim());
        match self {
            Kernel::Se(se) => se.eval(a, b),
            Kernel::Mp(mp) => mp.eval(a, b),
            Kernel::SeMp(se, mp) => se.eval(a, b) + mp.eval(a, b),
            Kernel::Pi(pi) => pi.eval(a, b),
            Kernel::Sp(pi, se) => pi.eval(a, b) + se.eval(a, b),
        }
    }

    /// Number of log-space hyperparameters (kernel only; the noise variance
    /// is owned by the model).
    pub fn n_params(&self) -> usize {
        match self {
            Kernel::Se(se) => 1 + se.log_lengthscales.len(),
            Kernel::Mp(mp) => mp.factors.iter().map(|f| 1 + f.log_scales.len()).sum(),
            Kernel::SeMp(se, mp) => {
                1 + se.log_lengthscales.len()
                    + mp.factors
                        .iter()
                        .map(|f| 1 + f.log_scales.len())
                        .sum::<usize>()
            }
            Kernel::Pi(pi) => pi.log_scales.len(),
            Kernel::Sp(pi, se) => pi.log_scales.len() + 1 + se.log_lengthscales.len(),
        }
    }

    /// Flattens the log-space hyperparameters. Layouts:
    /// SE `[log sv, log L..]`; MP per factor `[log off, log s..]`;
    /// SE+MP `[SE.., MP..]`; PI `[log s..]`; SP `[PI.., SE..]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        let push_se = |out: &mut Vec<f64>, se: &SeKernel| {
            out.push(se.log_signal_var);
            out.extend_from_slice(&se.log_lengthscales);
        };
        let push_mp = |out: &mut Vec<f64>, mp: &MpKernel| {
            for f in &mp.factors {
                out.push(f.log_offset);
                out.extend_from_slice(&f.log_scales);
            }
        };
        match self {
            Kernel::Se(se) => push_se(&mut out, se),
            Kernel::Mp(mp) => push_mp(&mut out, mp),
            Kernel::SeMp(se, mp) => {
                push_se(&mut out, se);
                push_mp(&mut out, mp);
            }
            Kernel::Pi(pi) => out.extend_from_slice(&pi.log_scales),
            Kernel::Sp(pi, se) => {
                out.extend_from_slice(&pi.log_scales);
                push_se(&mut out, se);
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "hyperparameter length");
        let set_mp = |mp: &mut MpKernel, p: &[f64]| {
            let mut i = 0;
            for f in &mut mp.factors {
                f.log_offset = p[i];
                i += 1;
                let len = f.log_scales.len();
                f.log_scales.copy_from_slice(&p[i..i + len]);
                i += len;
                f.rebuild();
            }
        };
        match self {
            Kernel::Se(se) => se.set_logs(p),
            Kernel::Mp(mp) => set_mp(mp, p),
            Kernel::SeMp(se, mp) => {
                let n_se = 1 + se.log_lengthscales.len();
                se.set_logs(&p[..n_se]);
                set_mp(mp, &p[n_se..]);
            }
            Kernel::Pi(pi) => pi.set_logs(p),
            Kernel::Sp(pi, se) => {
                let d_phi = pi.log_scales.len();
                pi.set_logs(&p[..d_phi]);
                se.set_logs(&p[d_phi..]);
            }
        }
    }

    /// Evaluates `k(a, b)` and fills `d k / d p` for every log-space
    /// hyperparameter into `grad` (same ordering as [`Kernel::params`]).
    pub fn eval_with_param_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.n_params());
        match self {
            Kernel::Se(se) => se_param_grad(se, a, b, grad),
            Kernel::Mp(mp) => mp_param_grad(mp, a, b, grad),
            Kernel::SeMp(se, mp) => {
                let n_se = 1 + se.log_lengthscales.len();
                let k1 = se_param_grad(se, a, b, &mut grad[..n_se]);
                let k2 = mp_param_grad(mp, a, b, &mut grad[n_se..]);
                k1 + k2
            }
            Kernel::Pi(pi) => pi_param_grad(pi, a, b, grad),
            Kernel::Sp(pi, se) => {
                let d_phi = pi.log_scales.len();
                let k1 = pi_param_grad(pi, a, b, &mut grad[..d_phi]);
                let k2 = se_param_grad(se, a, b, &mut grad[d_phi..]);
                k1 + k2
            }
        }
    }

    /// Accumulates `weight * d k(x, b) / d x` into `acc` (derivative through
    /// the first argument only).
    pub fn grad_x(&self, x: &[f64], b: &[f64], weight: f64, acc: &mut [f64]) {
        match self {
            Kernel::Se(se) => se_grad_x(se, se.eval(x, b), x, b, weight, acc),
            Kernel::Mp(mp) => mp_grad_x(mp, x, b, weight, acc),
            Kernel::SeMp(se, mp) => {
                se_grad_x(se, se.eval(x, b), x, b, weight, acc);
                mp_grad_x(mp, x, b, weight, acc);
            }
            Kernel::Pi(pi) => pi_grad_x(pi, x, b, weight, acc),
            Kernel::Sp(pi, se) => {
                pi_grad_x(pi, x, b, weight, acc);
                se_grad_x(se, se.eval(x, b), x, b, weight, acc);
            }
        }
    }

    /// Like [`Kernel::grad_x`] with the precomputed value `k_ab = k(x, b)`
    /// supplied, sparing the pure-SE case its kernel re-evaluation. Other
    /// variants fall back to recomputation (a cached sum cannot be split into
    /// its parts).
    #[inline]
    pub fn grad_x_with_k(&self, x: &[f64], b: &[f64], k_ab: f64, weight: f64, acc: &mut [f64]) {
        match self {
            Kernel::Se(se) => se_grad_x(se, k_ab, x, b, weight, acc),
            other => other.grad_x(x, b, weight, acc),
        }
    }

    /// Accumulates `weight * d k(x, x) / d x` into `acc` (derivative through
    /// both arguments).
    pub fn self_grad_x(&self, x: &[f64], weight: f64, acc: &mut [f64]) {
        match self {
            // k(x, x) = signal variance, independent of x
            Kernel::Se(_) => {}
            Kernel::Mp(mp) => mp_self_grad_x(mp, x, weight, acc),
            Kernel::SeMp(_, mp) => mp_self_grad_x(mp, x, weight, acc),
            Kernel::Pi(pi) => pi_self_grad_x(pi, x, weight, acc),
            Kernel::Sp(pi, _) => pi_self_grad_x(pi, x, weight, acc),
        }
    }
}

fn se_param_grad(se: &SeKernel, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
    let k = se.eval(a, b);
    grad[0] = k; // d/d log sv
    for (j, &il) in se.inv_lengthscales.iter().enumerate() {
        let d = a[j] - b[j];
        grad[1 + j] = k * d * d * il;
    }
    k
}

#[inline]
fn se_grad_x(se: &SeKernel, k: f64, x: &[f64], b: &[f64], weight: f64, acc: &mut [f64]) {
    let wk2 = -2.0 * weight * k;
    for (j, &il) in se.inv_lengthscales.iter().enumerate() {
        acc[j] += wk2 * (x[j] - b[j]) * il;
    }
}

fn mp_param_grad(mp: &MpKernel, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
    let loo = mp.loo_products(a, b);
    let mut i = 0;
    for (r, f) in mp.factors.iter().enumerate() {
        grad[i] = loo[r] * f.offset;
        i += 1;
        for (j, &s) in f.scales.iter().enumerate() {
            grad[i + j] = loo[r] * a[j] * b[j] * s;
        }
        i += f.scales.len();
    }
    mp.eval(a, b)
}

fn mp_grad_x(mp: &MpKernel, x: &[f64], b: &[f64], weight: f64, acc: &mut [f64]) {
    let loo = mp.loo_products(x, b);
    for (r, f) in mp.factors.iter().enumerate() {
        for (j, &s) in f.scales.iter().enumerate() {
            acc[j] += weight * loo[r] * s * b[j];
        }
    }
}

fn mp_self_grad_x(mp: &MpKernel, x: &[f64], weight: f64, acc: &mut [f64]) {
    let loo = mp.loo_products(x, x);
    for (r, f) in mp.factors.iter().enumerate() {
        for (j, &s) in f.scales.iter().enumerate() {
            acc[j] += weight * loo[r] * 2.0 * s * x[j];
        }
    }
}

fn pi_param_grad(pi: &PiKernel, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
    let d_phi = pi.log_scales.len();
    let mut pa = vec![0.0; d_phi];
    let mut pb = vec![0.0; d_phi];
    pi.basis.eval(a, &mut pa);
    pi.basis.eval(b, &mut pb);
    let mut k = 0.0;
    for j in 0..d_phi {
        let term = pa[j] * pb[j] * pi.scales[j];
        grad[j] = term;
        k += term;
    }
    k
}

fn pi_grad_x(pi: &PiKernel, x: &[f64], b: &[f64], weight: f64, acc: &mut [f64]) {
    let d_phi = pi.log_scales.len();
    let d_in = pi.input_dim;
    let mut px = vec![0.0; d_phi];
    let mut pb = vec![0.0; d_phi];
    let mut jac = vec![0.0; d_phi * d_in];
    pi.basis.eval(x, &mut px);
    pi.basis.eval(b, &mut pb);
    pi.basis.jacobian(x, &mut jac);
    for j in 0..d_phi {
        let w = weight * pi.scales[j] * pb[j];
        for i in 0..d_in {
            acc[i] += w * jac[j * d_in + i];
        }
    }
}

fn pi_self_grad_x(pi: &PiKernel, x: &[f64], weight: f64, acc: &mut [f64]) {
    let d_phi = pi.log_scales.len();
    let d_in = pi.input_dim;
    let mut px = vec![0.0; d_phi];
    let mut jac = vec![0.0; d_phi * d_in];
    pi.basis.eval(x, &mut px);
    pi.basis.jacobian(x, &mut jac);
    for j in 0..d_phi {
        let w = weight * 2.0 * pi.scales[j] * px[j];
        for i in 0..d_in {
            acc[i] += w * jac[j * d_in + i];
        }
    }
}
