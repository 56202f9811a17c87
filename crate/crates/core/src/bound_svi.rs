//! Uncollapsed ELBO with Gauss-Hermite expectations and minibatch gradients in
//! (μ, L, log θ), where Σ = L Lᵀ.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, Error, Result};
use crate::kernels::KernelHyperparams;
use crate::logistic::{log_sigmoid, sigmoid};
use crate::moments::{
    compute_cov_blocks_with_grads, kl_from_cholesky, kl_normal_vs_prior, marginal_moments, CovBlocks, VariationalState,
};
use crate::quadrature::GaussHermiteRule;

pub const DEFAULT_QUAD_ORDER: usize = 20;

/// Lower-triangular factor of Σ. Only the lower triangle is ever read.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyParam {
    pub l_factor: DMatrix<f64>,
}

impl CholeskyParam {
    pub fn new(l_factor: DMatrix<f64>) -> Result<Self> {
        if !l_factor.is_square() {
            return Err(Error::InvalidArgument("Cholesky factor must be square".into()));
        }
        if l_factor.diagonal().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("Cholesky factor needs a positive diagonal".into()));
        }
        Ok(Self { l_factor: l_factor.lower_triangle() })
    }

    pub fn identity(m: usize) -> Self {
        Self { l_factor: DMatrix::identity(m, m) }
    }

    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::InvalidState("covariance is not positive definite".into()))?;
        Ok(Self { l_factor: chol.l() })
    }

    pub fn m(&self) -> usize {
        self.l_factor.nrows()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let l = self.l_factor.lower_triangle();
        &l * l.transpose()
    }

    pub fn num_unconstrained(m: usize) -> usize {
        m * (m + 1) / 2
    }

    /// Packed lower triangle, row by row, with the diagonal in log-space.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(Self::num_unconstrained(m));
        for i in 0..m {
            for j in 0..=i {
                let v = self.l_factor[(i, j)];
                out.push(if i == j { v.ln() } else { v });
            }
        }
        out
    }

    pub fn from_unconstrained(m: usize, v: &[f64]) -> Result<Self> {
        check_dims("packed Cholesky length", v.len(), Self::num_unconstrained(m))?;
        let mut l = DMatrix::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                l[(i, j)] = if i == j { v[k].exp() } else { v[k] };
                k += 1;
            }
        }
        Ok(Self { l_factor: l })
    }

    /// Maps ∂F/∂L (lower triangle) to the packed unconstrained parametrization.
    pub fn unconstrained_grad(&self, d_l: &DMatrix<f64>) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(Self::num_unconstrained(m));
        for i in 0..m {
            for j in 0..=i {
                let g = d_l[(i, j)];
                out.push(if i == j { g * self.l_factor[(i, i)] } else { g });
            }
        }
        out
    }
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y.to_string()))
    }
}

/// E_{N(f | mean, var)} log σ(y f) with the rule's fixed nodes.
pub fn expected_log_logistic(mean: f64, var: f64, y: f64, rule: &GaussHermiteRule) -> f64 {
    rule.expect(mean, var, |f| log_sigmoid(y * f))
}

/// Value together with ∂/∂mean and ∂/∂var of the quadrature sum.
fn expected_log_logistic_with_grads(mean: f64, var: f64, y: f64, rule: &GaussHermiteRule) -> (f64, f64, f64) {
    let norm = std::f64::consts::PI.sqrt();
    if var <= 0.0 {
        let s = sigmoid(-y * mean);
        return (log_sigmoid(y * mean), y * s, -0.5 * s * (1.0 - s));
    }
    let sd = (2.0 * var).sqrt();
    let (mut v, mut dm, mut ds) = (0.0, 0.0, 0.0);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let f = mean + sd * x;
        let s = sigmoid(-y * f);
        v += w * log_sigmoid(y * f);
        dm += w * y * s;
        ds += w * y * s * x;
    }
    // d/dvar of √(2 var) x is x / √(2 var)
    (v / norm, dm / norm, ds / (sd * norm))
}

/// Full-data ELBO Σᵢ E_q log σ(yᵢfᵢ) − KL.
pub fn elbo_quadrature(
    blocks: &CovBlocks,
    state: &VariationalState,
    y: &DVector<f64>,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    check_dims("labels vs data points", y.len(), blocks.n())?;
    let mm = marginal_moments(blocks, state)?;
    let mut lik = 0.0;
    for i in 0..y.len() {
        check_label(y[i])?;
        lik += expected_log_logistic(mm.mean[i], mm.var[i], y[i], rule);
    }
    Ok(lik - kl_normal_vs_prior(state, blocks)?)
}

/// [`elbo_quadrature`] with Σ given by its factor, which avoids refactorizing Σ.
pub fn elbo_quadrature_chol(
    blocks: &CovBlocks,
    mu: &DVector<f64>,
    chol: &CholeskyParam,
    y: &DVector<f64>,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    check_dims("labels vs data points", y.len(), blocks.n())?;
    let l = chol.l_factor.lower_triangle();
    let state = VariationalState { mu: mu.clone(), sigma: &l * l.transpose() };
    let mm = marginal_moments(blocks, &state)?;
    let mut lik = 0.0;
    for i in 0..y.len() {
        check_label(y[i])?;
        lik += expected_log_logistic(mm.mean[i], mm.var[i], y[i], rule);
    }
    Ok(lik - kl_from_cholesky(mu, &l, blocks)?)
}

#[derive(Debug, Clone)]
pub struct SviEval {
    /// (n/|b|) Σ_{i∈b} E log σ(yᵢfᵢ) − KL.
    pub value: f64,
    pub grad_mu: DVector<f64>,
    /// ∂/∂L on the lower triangle; the strict upper triangle is zero.
    pub grad_l: DMatrix<f64>,
    pub grad_log_theta: DVector<f64>,
}

/// Minibatch estimate of the ELBO and its gradients.
///
/// Blocks are built for the batch rows only, so the cost is O(|b| m² + m³).
#[allow(clippy::too_many_arguments)]
pub fn svi_elbo_and_grads(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &KernelHyperparams,
    mu: &DVector<f64>,
    chol: &CholeskyParam,
    y: &DVector<f64>,
    batch: &[usize],
    rule: &GaussHermiteRule,
) -> Result<SviEval> {
    let n = x.nrows();
    check_dims("labels vs data points", y.len(), n)?;
    check_dims("μ vs inducing points", mu.len(), z.nrows())?;
    check_dims("Cholesky factor vs inducing points", chol.m(), z.nrows())?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("minibatch must not be empty".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("batch index {bad} out of range for {n} points")));
    }
    let xb = x.select_rows(batch);
    let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
    for &v in &yb {
        check_label(v)?;
    }
    let blocks = compute_cov_blocks_with_grads(&xb, z, theta)?;
    let grads = blocks.grads.as_ref().expect("blocks built with gradients");
    let b = batch.len();
    let m = blocks.m();
    let scale = n as f64 / b as f64;
    let l = chol.l_factor.lower_triangle();

    // Gᵀ = K⁻¹ K_mb (m×b), so meanᵢ = gᵢᵀμ and varᵢ = K̃ᵢᵢ + ‖Lᵀgᵢ‖²
    let g_t = blocks.solve_k_mm(&blocks.k_nm.transpose());
    let mean = g_t.tr_mul(mu);
    let lg = l.tr_mul(&g_t);
    let mut lik = 0.0;
    let mut g_m = DVector::zeros(b);
    let mut g_s = DVector::zeros(b);
    for i in 0..b {
        let var = (blocks.ktilde_diag[i] + lg.column(i).norm_squared()).max(0.0);
        let (v, dm, ds) = expected_log_logistic_with_grads(mean[i], var, yb[i], rule);
        lik += v;
        g_m[i] = scale * dm;
        g_s[i] = scale * ds;
    }

    let kl = kl_from_cholesky(mu, &l, &blocks)?;
    let value = scale * lik - kl;

    let k_inv = blocks.k_mm_inv();
    let beta = &k_inv * mu;
    let grad_mu = &g_t * &g_m - &beta;

    // GᵀDG, with D = diag(g_s)
    let mut g_t_d = g_t.clone();
    for (mut col, &d) in g_t_d.column_iter_mut().zip(g_s.iter()) {
        col *= d;
    }
    let gdg = &g_t_d * g_t.transpose();
    let h = &gdg - &k_inv * 0.5;
    let mut grad_l = (&h * &l * 2.0).lower_triangle();
    for k in 0..m {
        grad_l[(k, k)] += 1.0 / l[(k, k)];
    }

    let sigma = &l * l.transpose();
    let sk = &sigma * &k_inv;
    // adjoint of K_bm: g_m βᵀ + 2 D K_bm (K⁻¹ΣK⁻¹ − K⁻¹)
    let q = &k_inv * &sk - &k_inv;
    let mut n_bar = &g_m * beta.transpose();
    let kq = &blocks.k_nm * &q;
    for i in 0..b {
        for j in 0..m {
            n_bar[(i, j)] += 2.0 * g_s[i] * kq[(i, j)];
        }
    }
    // adjoint of K_mm: −(Gᵀg_m)βᵀ − 2GᵀDGΣK⁻¹ + GᵀDG − ½(K⁻¹ − K⁻¹ΣK⁻¹ − ββᵀ)
    let gtg_m = &g_t * &g_m;
    let m_bar = -(&gtg_m * beta.transpose()) - &gdg * &sk * 2.0 + &gdg
        - (&k_inv - &k_inv * &sk - &beta * beta.transpose()) * 0.5;

    let p = grads.d_k_mm.len();
    let grad_log_theta = DVector::from_iterator(
        p,
        (0..p).map(|k| n_bar.dot(&grads.d_k_nm[k]) + m_bar.dot(&grads.d_k_mm[k]) + g_s.dot(&grads.d_k_nn_diag[k])),
    );
    Ok(SviEval { value, grad_mu, grad_l, grad_log_theta })
}
