//! Covariance blocks, variational marginals q(f_i), KL(q(u) || p(u)) and predictions.
//!
//! Everything here runs in O(nm² + m³): only the diagonal of K_nn is ever formed.
//! All formulas use the jittered inducing covariance `K_mm + jitter·I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dims, Error, Result};
use crate::kernels::{
    kernel_diag, kernel_diag_param_grads, kernel_matrix, kernel_matrix_param_grads, KernelHyperparams,
};
use crate::logistic::sigmoid;
use crate::quadrature::GaussHermiteRule;

/// Relative tolerance below which negative variances are treated as round-off.
pub const VAR_CLAMP_RTOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CovBlocks {
    /// K(Z, Z) without jitter.
    pub k_mm: DMatrix<f64>,
    /// K(X, Z), n×m.
    pub k_nm: DMatrix<f64>,
    /// diag K(X, X), including the noise variance for training blocks.
    pub k_nn_diag: DVector<f64>,
    /// diag(K_nn - K_nm K_mm⁻¹ K_mn).
    pub ktilde_diag: DVector<f64>,
    /// Lower Cholesky factor of K_mm + jitter·I.
    pub chol_k_mm: DMatrix<f64>,
    /// L⁻¹ K_mn (m×n), the whitened cross-covariance.
    pub k_mn_white: DMatrix<f64>,
    pub jitter: f64,
    /// Derivatives of the blocks with respect to the active log-hyperparameters.
    pub grads: Option<BlockGrads>,
}

/// ∂K_mm, ∂K_nm and ∂diag(K_nn) per active log-hyperparameter (jitter excluded).
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub d_k_mm: Vec<DMatrix<f64>>,
    pub d_k_nm: Vec<DMatrix<f64>>,
    pub d_k_nn_diag: Vec<DVector<f64>>,
}

impl CovBlocks {
    pub fn n(&self) -> usize {
        self.k_nm.nrows()
    }

    pub fn m(&self) -> usize {
        self.k_mm.nrows()
    }

    pub fn k_mm_jittered(&self) -> DMatrix<f64> {
        let m = self.m();
        &self.k_mm + DMatrix::identity(m, m) * self.jitter
    }

    pub fn log_det_k_mm(&self) -> f64 {
        2.0 * self.chol_k_mm.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// L⁻¹ b.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_k_mm.solve_lower_triangular(b).expect("non-singular Cholesky factor")
    }

    pub fn whiten_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol_k_mm.solve_lower_triangular(b).expect("non-singular Cholesky factor")
    }

    /// K_mm⁻¹ b.
    pub fn solve_k_mm(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.whiten(b);
        self.chol_k_mm.tr_solve_lower_triangular(&w).expect("non-singular Cholesky factor")
    }

    pub fn k_mm_inv(&self) -> DMatrix<f64> {
        self.solve_k_mm(&DMatrix::identity(self.m(), self.m()))
    }

    /// Rows of K_nm K_mm⁻¹ (n×m).
    pub fn projection(&self) -> DMatrix<f64> {
        self.chol_k_mm
            .tr_solve_lower_triangular(&self.k_mn_white)
            .expect("non-singular Cholesky factor")
            .transpose()
    }
}

fn clamp_variances(v: &mut DVector<f64>, reference: &DVector<f64>, what: &str) -> Result<()> {
    let scale = reference.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = VAR_CLAMP_RTOL * scale.max(f64::MIN_POSITIVE);
    for x in v.iter_mut() {
        if *x < 0.0 {
            if *x < -tol {
                return Err(Error::Consistency(format!("{what} variance {x:e} below -{tol:e}")));
            }
            *x = 0.0;
        }
    }
    Ok(())
}

fn build_blocks(x: &DMatrix<f64>, z: &DMatrix<f64>, theta: &KernelHyperparams, with_noise: bool) -> Result<CovBlocks> {
    if z.nrows() == 0 {
        return Err(Error::InvalidArgument("at least one inducing point is required".into()));
    }
    check_dims("feature dimension of X and Z", x.ncols(), z.ncols())?;
    let k_mm = kernel_matrix(z, z, theta, false)?;
    let m = k_mm.nrows();
    let jittered = &k_mm + DMatrix::identity(m, m) * theta.jitter;
    let chol = Cholesky::new(jittered).ok_or(Error::SingularKernel { jitter: theta.jitter })?;
    let chol_k_mm = chol.l();
    let k_nm = kernel_matrix(x, z, theta, false)?;
    let k_nn_diag = kernel_diag(x.nrows(), theta, with_noise);
    let k_mn_white = chol_k_mm
        .solve_lower_triangular(&k_nm.transpose())
        .ok_or(Error::SingularKernel { jitter: theta.jitter })?;
    let mut ktilde_diag = DVector::from_iterator(
        x.nrows(),
        k_mn_white.column_iter().zip(k_nn_diag.iter()).map(|(a, &k)| k - a.norm_squared()),
    );
    clamp_variances(&mut ktilde_diag, &k_nn_diag, "conditional")?;
    Ok(CovBlocks { k_mm, k_nm, k_nn_diag, ktilde_diag, chol_k_mm, k_mn_white, jitter: theta.jitter, grads: None })
}

/// Covariance blocks between training inputs `x` and inducing inputs `z`.
pub fn compute_cov_blocks(x: &DMatrix<f64>, z: &DMatrix<f64>, theta: &KernelHyperparams) -> Result<CovBlocks> {
    build_blocks(x, z, theta, true)
}

/// As [`compute_cov_blocks`], also carrying the hyperparameter derivatives needed by
/// the bound gradients.
pub fn compute_cov_blocks_with_grads(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &KernelHyperparams,
) -> Result<CovBlocks> {
    let mut blocks = build_blocks(x, z, theta, true)?;
    blocks.grads = Some(BlockGrads {
        d_k_mm: kernel_matrix_param_grads(z, z, theta)?,
        d_k_nm: kernel_matrix_param_grads(x, z, theta)?,
        d_k_nn_diag: kernel_diag_param_grads(x.nrows(), theta, true),
    });
    Ok(blocks)
}

/// Blocks for test inputs. `observation_space` adds the noise variance to the
/// predictive diagonal; the default latent-space prediction leaves it out.
pub fn compute_cross_blocks(
    x_star: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &KernelHyperparams,
    observation_space: bool,
) -> Result<CovBlocks> {
    build_blocks(x_star, z, theta, observation_space)
}

/// Gaussian q(u) = N(mu, sigma).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl VariationalState {
    /// μ = 0, Σ = I.
    pub fn standard(m: usize) -> Self {
        Self { mu: DVector::zeros(m), sigma: DMatrix::identity(m, m) }
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.sigma.clone())
            .ok_or_else(|| Error::InvalidState("Σ is not symmetric positive definite".into()))
    }

    fn check(&self, blocks: &CovBlocks) -> Result<()> {
        check_dims("variational mean vs inducing points", self.mu.len(), blocks.m())?;
        check_dims("variational covariance rows", self.sigma.nrows(), blocks.m())?;
        check_dims("variational covariance cols", self.sigma.ncols(), blocks.m())
    }
}

/// Means and variances of the Gaussian marginals q(f_i).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

pub type PredictiveMoments = MarginalMoments;

/// mᵢ = kᵢᵀK_mm⁻¹μ and Sᵢ² = K̃ᵢᵢ + kᵢᵀK_mm⁻¹ΣK_mm⁻¹kᵢ.
pub fn marginal_moments(blocks: &CovBlocks, state: &VariationalState) -> Result<MarginalMoments> {
    state.check(blocks)?;
    let a = &blocks.k_mn_white;
    let mean = a.tr_mul(&blocks.whiten_vec(&state.mu));
    // W = L⁻¹ Σ L⁻ᵀ
    let w = blocks.whiten(&blocks.whiten(&state.sigma).transpose());
    let wa = &w * a;
    let mut var = DVector::from_iterator(
        blocks.n(),
        a.column_iter()
            .zip(wa.column_iter())
            .zip(blocks.ktilde_diag.iter())
            .map(|((ac, wc), &kt)| kt + ac.dot(&wc)),
    );
    clamp_variances(&mut var, &blocks.k_nn_diag, "marginal")?;
    Ok(MarginalMoments { mean, var })
}

/// KL(N(μ, Σ) || N(0, K_mm)).
pub fn kl_normal_vs_prior(state: &VariationalState, blocks: &CovBlocks) -> Result<f64> {
    state.check(blocks)?;
    let chol_s = state.cholesky()?;
    kl_from_cholesky(&state.mu, &chol_s.l(), blocks)
}

/// KL(N(μ, L Lᵀ) || N(0, K_mm)) for a lower-triangular `l_sigma`.
pub fn kl_from_cholesky(mu: &DVector<f64>, l_sigma: &DMatrix<f64>, blocks: &CovBlocks) -> Result<f64> {
    check_dims("variational mean vs inducing points", mu.len(), blocks.m())?;
    check_dims("covariance factor vs inducing points", l_sigma.nrows(), blocks.m())?;
    let m = blocks.m() as f64;
    let log_det_s = 2.0 * l_sigma.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
    let trace = blocks.whiten(l_sigma).norm_squared();
    let quad = blocks.whiten_vec(mu).norm_squared();
    Ok(0.5 * (blocks.log_det_k_mm() - log_det_s - m + trace + quad))
}

/// Moments of ∫ p(f*|u) q(u) du at the points behind `cross` (see [`compute_cross_blocks`]).
pub fn predict_latent(cross: &CovBlocks, state: &VariationalState) -> Result<PredictiveMoments> {
    marginal_moments(cross, state)
}

/// p(y* = +1) = ∫ σ(f) N(f | mean, var) df by Gauss-Hermite quadrature.
pub fn predict_class_prob(pm: &PredictiveMoments, quad_order: usize) -> Result<Vec<f64>> {
    let rule = GaussHermiteRule::new(quad_order)?;
    Ok(pm.mean.iter().zip(pm.var.iter()).map(|(&m, &v)| rule.expect(m, v, sigmoid)).collect())
}
