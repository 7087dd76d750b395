//! Exact Gaussian-process regression with marginal-likelihood hyperparameter
//! training.
//!
//! A fitted [`GpModel`] caches the Cholesky factor of `K + sigma_n^2 I +
//! jitter I`, the weight vector `alpha = (K + sigma_n^2 I)^{-1} y`, and the
//! precision matrix used for posterior variances, so posterior queries and
//! reparametrized posterior draws cost `O(n)` / `O(n^2)`.
//!
//! Hyperparameters (and the noise variance) live in log space and are trained
//! by Adam on the exact marginal likelihood with analytic gradients; the
//! differentiation tape is not involved, because gradients through the
//! factorization are never needed elsewhere.

pub mod kernel;

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::diff::{CustomOp, OpId, Tape, Var};
use crate::fmath;
use crate::linalg::{cholesky_in_place, cholesky_solve, dot, invert_from_cholesky, Mat};
use crate::opt::AdamState;

pub use kernel::{BasisFn, Kernel, LinearBasis, MpFactor, MpKernel, PiKernel, SeKernel};

const LN_2PI: f64 = 1.837877066409345;
/// Absolute floor on the noise variance; keeps factorizations sane when the
/// likelihood pushes the noise toward zero.
pub const NOISE_VAR_FLOOR: f64 = 1e-10;
/// Log-parameter clamp applied during hyperparameter optimization only.
const LOG_PARAM_BOUND: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub enum GpError {
    EmptyTrainingSet,
    DimensionMismatch { expected: usize, got: usize },
    NotFitted,
    /// Cholesky failed even at the largest jitter rung.
    FactorizationFailed { jitter_max: f64 },
}

impl fmt::Display for GpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpError::EmptyTrainingSet => write!(f, "training set is empty"),
            GpError::DimensionMismatch { expected, got } => {
                write!(f, "input dimension {got} does not match kernel dimension {expected}")
            }
            GpError::NotFitted => write!(f, "model must be fitted first"),
            GpError::FactorizationFailed { jitter_max } => {
                write!(f, "Cholesky factorization failed up to jitter {jitter_max:e}")
            }
        }
    }
}

/// Cached factorization state of a fitted model.
#[derive(Debug, Clone)]
pub struct GpFit {
    /// Lower Cholesky factor of `K + sigma_n^2 I + jitter I`.
    pub chol: Mat,
    /// `(K + sigma_n^2 I + jitter I)^{-1} y`.
    pub alpha: Vec<f64>,
    /// `(K + sigma_n^2 I + jitter I)^{-1}`.
    pub precision: Mat,
    /// Jitter actually used.
    pub jitter: f64,
}

/// Exact GP regressor on `n` training rows.
pub struct GpModel {
    kernel: Kernel,
    log_noise_var: f64,
    inputs: Mat,
    targets: Vec<f64>,
    fit: Option<GpFit>,
    clamp_warnings: AtomicU64,
}

impl fmt::Debug for GpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GpModel")
            .field("kernel", &self.kernel)
            .field("log_noise_var", &self.log_noise_var)
            .field("n", &self.inputs.rows())
            .field("fitted", &self.fit.is_some())
            .finish()
    }
}

impl GpModel {
    pub fn new(kernel: Kernel, noise_var: f64, inputs: Mat, targets: Vec<f64>) -> Self {
        assert_eq!(inputs.rows(), targets.len(), "rows vs targets");
        assert_eq!(inputs.cols(), kernel.input_dim(), "input dim vs kernel dim");
        GpModel {
            kernel,
            log_noise_var: fmath::ln(noise_var.max(NOISE_VAR_FLOOR)),
            inputs,
            targets,
            fit: None,
            clamp_warnings: AtomicU64::new(0),
        }
    }

    /// SE-kernel model with scale-aware defaults: lengthscales from the
    /// per-dimension spread of the inputs, signal variance from the target
    /// variance, noise at 1% of it.
    pub fn se_with_data_init(inputs: Mat, targets: Vec<f64>) -> Self {
        data_init_model(&KernelChoice::Se, inputs, targets)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        fmath::exp(self.log_noise_var)
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn n(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn fit_state(&self) -> Option<&GpFit> {
        self.fit.as_ref()
    }

    /// Times a negative posterior variance has been clamped to zero.
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings.load(Ordering::Relaxed)
    }

    /// Full hyperparameter vector: kernel log-params then `log sigma_n^2`.
    pub fn hyper_params(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        p.push(self.log_noise_var);
        p
    }

    pub fn set_hyper_params(&mut self, p: &[f64]) {
        let nk = self.kernel.n_params();
        assert_eq!(p.len(), nk + 1);
        self.kernel.set_params(&p[..nk]);
        self.log_noise_var = p[nk];
        self.fit = None;
    }

    fn gram(&self) -> Mat {
        let n = self.n();
        let mut k = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.eval(self.inputs.row(i), self.inputs.row(j));
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }

    /// Factorizes the regularized Gram matrix and caches `alpha` and the
    /// precision matrix. Jitter escalates `1e-10 .. 1e-6` (times `trace/n`)
    /// by factors of ten until the factorization succeeds.
    pub fn fit(&mut self) -> Result<(), GpError> {
        let n = self.n();
        if n == 0 {
            return Err(GpError::EmptyTrainingSet);
        }
        let k = self.gram();
        let noise = self.noise_var();
        let scale = (k.trace() / n as f64).max(1e-300);
        let mut jitter = 1e-10 * scale;
        let jitter_max = 1e-6 * scale;
        loop {
            let mut a = k.clone();
            for i in 0..n {
                a.add_to(i, i, noise + jitter);
            }
            if cholesky_in_place(&mut a).is_ok() {
                let alpha = cholesky_solve(&a, &self.targets);
                let precision = invert_from_cholesky(&a);
                self.fit = Some(GpFit {
                    chol: a,
                    alpha,
                    precision,
                    jitter,
                });
                return Ok(());
            }
            if jitter >= jitter_max {
                return Err(GpError::FactorizationFailed { jitter_max });
            }
            jitter *= 10.0;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), GpError> {
        if x.len() != self.input_dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn cross_row(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kernel.eval(x, self.inputs.row(i));
        }
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.check_input(x)?;
        let fit = self.fit.as_ref().ok_or(GpError::NotFitted)?;
        let n = self.n();
        let mut k = vec![0.0; n];
        self.cross_row(x, &mut k);
        let mean = dot(&k, &fit.alpha);
        let mut bk = vec![0.0; n];
        fit.precision.matvec(&k, &mut bk);
        let mut var = self.kernel.eval(x, x) - dot(&k, &bk);
        if var < 0.0 {
            self.clamp_warnings.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Reparametrized posterior draw `mean(x) + sqrt(var(x)) * eps`.
    pub fn sample_posterior(&self, x: &[f64], eps: f64) -> Result<f64, GpError> {
        let (mean, var) = self.posterior(x)?;
        Ok(mean + fmath::sqrt(var) * eps)
    }

    /// Exact log marginal likelihood
    /// `-1/2 y^T alpha - sum_i log L_ii - n/2 log 2 pi`.
    pub fn log_marginal_likelihood(&self) -> Result<f64, GpError> {
        let fit = self.fit.as_ref().ok_or(GpError::NotFitted)?;
        let n = self.n() as f64;
        let data_term = -0.5 * dot(&self.targets, &fit.alpha);
        let logdet_half: f64 = (0..self.n()).map(|i| fmath::ln(fit.chol.at(i, i))).sum();
        Ok(data_term - logdet_half - 0.5 * n * LN_2PI)
    }

    /// Analytic gradient of the log marginal likelihood with respect to the
    /// full log-space hyperparameter vector (kernel params then noise):
    /// `dL/dp = 1/2 tr((alpha alpha^T - P) dK/dp)` with `P` the cached
    /// precision matrix.
    pub fn lml_gradient(&self) -> Result<Vec<f64>, GpError> {
        let fit = self.fit.as_ref().ok_or(GpError::NotFitted)?;
        let n = self.n();
        let nk = self.kernel.n_params();
        let mut grad = vec![0.0; nk + 1];
        let mut kg = vec![0.0; nk];
        for i in 0..n {
            for j in 0..=i {
                self.kernel
                    .eval_with_param_grad(self.inputs.row(i), self.inputs.row(j), &mut kg);
                let w = fit.alpha[i] * fit.alpha[j] - fit.precision.at(i, j);
                // off-diagonal pairs appear twice in the trace
                let mult = if i == j { 0.5 } else { 1.0 };
                for (gp, kgp) in grad[..nk].iter_mut().zip(&kg) {
                    *gp += mult * w * kgp;
                }
            }
        }
        // dK/d log sigma_n^2 = sigma_n^2 I
        let noise = self.noise_var();
        grad[nk] = 0.5
            * (0..n)
                .map(|i| (fit.alpha[i] * fit.alpha[i] - fit.precision.at(i, i)) * noise)
                .sum::<f64>();
        Ok(grad)
    }

    /// Maximizes the marginal likelihood over the log-space hyperparameters
    /// with Adam. The best iterate is always retained, so the final
    /// likelihood never degrades below the initial one; a non-finite
    /// likelihood or a failed factorization reverts to the best iterate and
    /// stops.
    pub fn optimize_hyperparameters(
        &mut self,
        iters: usize,
        learning_rate: f64,
    ) -> Result<HyperOptReport, GpError> {
        if self.fit.is_none() {
            self.fit()?;
        }
        let initial_lml = self.log_marginal_likelihood()?;
        if iters == 0 {
            return Ok(HyperOptReport {
                initial_lml,
                final_lml: initial_lml,
                iters_run: 0,
                diverged: false,
            });
        }

        let mut params = self.hyper_params();
        let mut best_params = params.clone();
        let mut best_lml = initial_lml;
        let mut adam = AdamState::new(params.len(), learning_rate);
        let mut diverged = false;
        let mut iters_run = 0;

        for _ in 0..iters {
            let grad = match self.lml_gradient() {
                Ok(g) => g,
                Err(_) => {
                    diverged = true;
                    break;
                }
            };
            // ascent on the likelihood
            let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
            adam.step(&mut params, &descent).expect("shapes fixed");
            let noise_idx = params.len() - 1;
            for (i, p) in params.iter_mut().enumerate() {
                *p = p.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
                if i == noise_idx && *p < fmath::ln(NOISE_VAR_FLOOR) {
                    *p = fmath::ln(NOISE_VAR_FLOOR);
                }
            }
            self.set_hyper_params(&params);
            iters_run += 1;
            match self.fit() {
                Ok(()) => {}
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
            let lml = self.log_marginal_likelihood()?;
            if !lml.is_finite() {
                diverged = true;
                break;
            }
            if lml > best_lml {
                best_lml = lml;
                best_params.copy_from_slice(&params);
            }
        }

        self.set_hyper_params(&best_params);
        self.fit()?;
        Ok(HyperOptReport {
            initial_lml,
            final_lml: self.log_marginal_likelihood()?,
            iters_run,
            diverged,
        })
    }
}

/// Outcome of one hyperparameter optimization run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperOptReport {
    pub initial_lml: f64,
    pub final_lml: f64,
    pub iters_run: usize,
    pub diverged: bool,
}

/// Kernel family selector used where models are built from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    Se,
    Mp { degree: usize },
    SeMp { degree: usize },
    /// Physically-inspired linear kernel on the shipped linear basis.
    Pi,
    /// Semi-parametric: linear-basis PI plus SE.
    Sp,
}

/// Builds an unfitted model of the chosen family with scale-aware initial
/// hyperparameters derived from the data (input spread, target variance,
/// noise at 1% of target variance).
pub fn data_init_model(choice: &KernelChoice, inputs: Mat, targets: Vec<f64>) -> GpModel {
    let n = inputs.rows().max(1) as f64;
    let d = inputs.cols();
    let mut col_var = vec![0.0; d];
    let mut col_meansq = vec![0.0; d];
    for j in 0..d {
        let mean = (0..inputs.rows()).map(|i| inputs.at(i, j)).sum::<f64>() / n;
        col_var[j] = (0..inputs.rows())
            .map(|i| {
                let c = inputs.at(i, j) - mean;
                c * c
            })
            .sum::<f64>()
            / n;
        col_meansq[j] =
            (0..inputs.rows()).map(|i| inputs.at(i, j) * inputs.at(i, j)).sum::<f64>() / n;
    }
    let t_mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
    let t_var = targets
        .iter()
        .map(|t| (t - t_mean) * (t - t_mean))
        .sum::<f64>()
        / targets.len().max(1) as f64;
    let signal = t_var.max(1e-8);
    let noise = (0.01 * signal).max(NOISE_VAR_FLOOR);

    let se = || {
        let lengthscales: Vec<f64> = col_var.iter().map(|v| v.max(1e-4)).collect();
        SeKernel::new(signal, &lengthscales)
    };
    let mp = |degree: usize| {
        let scales: Vec<f64> = col_meansq
            .iter()
            .map(|&m| 1.0 / (d as f64 * m.max(1e-6)))
            .collect();
        MpKernel::with_dim_scales(degree, 1.0, &scales)
    };
    let kernel = match choice {
        KernelChoice::Se => Kernel::Se(se()),
        KernelChoice::Mp { degree } => Kernel::Mp(mp(*degree)),
        KernelChoice::SeMp { degree } => Kernel::SeMp(se(), mp(*degree)),
        KernelChoice::Pi => Kernel::Pi(PiKernel::new(Arc::new(LinearBasis), d, 1.0)),
        KernelChoice::Sp => Kernel::Sp(PiKernel::new(Arc::new(LinearBasis), d, 1.0), se()),
    };
    GpModel::new(kernel, noise, inputs, targets)
}

/// Fused tape node drawing one reparametrized posterior sample
/// `mean(x) + sqrt(var(x)) * eps` with gradients flowing into the query `x`.
/// The training data, hyperparameters, and factorization are constants.
pub struct GpSampleOp {
    model: Arc<GpModel>,
}

impl GpSampleOp {
    pub fn new(model: Arc<GpModel>) -> Result<Self, GpError> {
        if model.fit_state().is_none() {
            return Err(GpError::NotFitted);
        }
        Ok(GpSampleOp { model })
    }

    pub fn model(&self) -> &Arc<GpModel> {
        &self.model
    }

    /// Registers this op on a tape and returns a handle for
    /// [`sample_posterior_var`].
    pub fn register(self, tape: &Tape) -> OpId {
        tape.register_op(alloc::rc::Rc::new(self))
    }
}

impl CustomOp for GpSampleOp {
    fn name(&self) -> &'static str {
        "gp_sample"
    }

    fn arity(&self) -> usize {
        self.model.input_dim()
    }

    // cache layout: [k_0..k_n, (Pk)_0..(Pk)_n, var, std]
    fn cache_len(&self) -> usize {
        2 * self.model.n() + 2
    }

    fn forward(&self, eps: f64, x: &[f64], cache: &mut [f64]) -> f64 {
        let n = self.model.n();
        let fit = self.model.fit_state().expect("fitted");
        let (k, rest) = cache.split_at_mut(n);
        let (pk, tail) = rest.split_at_mut(n);
        self.model.cross_row(x, k);
        let mean = dot(k, &fit.alpha);
        fit.precision.matvec(k, pk);
        let mut var = self.model.kernel.eval(x, x) - dot(k, pk);
        if var < 0.0 {
            self.model.clamp_warnings.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        let std = fmath::sqrt(var);
        tail[0] = var;
        tail[1] = std;
        mean + std * eps
    }

    fn backward(
        &self,
        eps: f64,
        x: &[f64],
        _value: f64,
        out_adj: f64,
        cache: &[f64],
        parent_adj: &mut [f64],
    ) {
        let n = self.model.n();
        let fit = self.model.fit_state().expect("fitted");
        let pk = &cache[n..2 * n];
        let var = cache[2 * n];
        let std = cache[2 * n + 1];
        let k = &cache[..n];
        let kernel = &self.model.kernel;
        let var_grad = var > 0.0 && std > 0.0;
        for i in 0..n {
            // d sample / d k_i = alpha_i - eps * (Pk)_i / std
            let mut w = fit.alpha[i];
            if var_grad {
                w -= eps * pk[i] / std;
            }
            kernel.grad_x_with_k(x, self.model.inputs.row(i), k[i], out_adj * w, parent_adj);
        }
        if var_grad {
            // d sample / d k(x,x) = eps / (2 std)
            kernel.self_grad_x(x, out_adj * eps / (2.0 * std), parent_adj);
        }
    }
}

/// Records one posterior draw on the tape through a registered
/// [`GpSampleOp`].
pub fn sample_posterior_var<'t>(tape: &'t Tape, op: OpId, x: &[Var<'t>], eps: f64) -> Var<'t> {
    tape.custom(op, x, eps)
}
