//! Jaakkola–Jordan quadratic lower bound on the log-logistic likelihood.
//!
//! `log σ(t) ≥ t/2 − ξ/2 + log σ(ξ) − λ(ξ)(t² − ξ²)` with
//! `λ(ξ) = tanh(ξ/2)/(4ξ) = (σ(ξ) − ½)/(2ξ)`, tight at |t| = ξ.

use nalgebra::{DMatrix, DVector};

use crate::collapsed::{collapse, collapse_grads, optimal_state};
use crate::error::{check_dims, Error, Result};
use crate::logistic::log_sigmoid;
use crate::moments::{kl_normal_vs_prior, marginal_moments, CovBlocks, VariationalState};

/// Below this ξ, λ and λ' use their Taylor series.
const SERIES_SWITCH: f64 = 1e-4;

pub fn lambda_fn(xi: f64) -> f64 {
    let xi = xi.abs();
    if xi <= SERIES_SWITCH {
        0.125 - xi * xi / 96.0
    } else {
        (0.5 * xi).tanh() / (4.0 * xi)
    }
}

/// dλ/dξ.
pub fn lambda_deriv(xi: f64) -> f64 {
    let a = xi.abs();
    let d = if a <= SERIES_SWITCH {
        -a / 48.0 + a * a * a / 240.0
    } else {
        let sech = 1.0 / (0.5 * a).cosh();
        sech * sech / (8.0 * a) - (0.5 * a).tanh() / (4.0 * a * a)
    };
    d * xi.signum()
}

/// Right-hand side of the bound for a scalar argument t.
pub fn jj_scalar_bound(t: f64, xi: f64) -> f64 {
    t / 2.0 - xi / 2.0 + log_sigmoid(xi) - lambda_fn(xi) * (t * t - xi * xi)
}

/// Per-point parameters ξ ≥ 0 and the induced weights λ(ξ).
#[derive(Debug, Clone, PartialEq)]
pub struct XiState {
    pub xi: DVector<f64>,
    pub lambda_diag: DVector<f64>,
}

impl XiState {
    pub fn new(xi: DVector<f64>) -> Result<Self> {
        if xi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("ξ must be finite and nonnegative".into()));
        }
        let lambda_diag = xi.map(lambda_fn);
        Ok(Self { xi, lambda_diag })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Σᵢ (log σ(ξᵢ) − ξᵢ/2 + λ(ξᵢ) ξᵢ²)
    fn constant_part(&self) -> f64 {
        self.xi
            .iter()
            .zip(self.lambda_diag.iter())
            .map(|(&x, &l)| log_sigmoid(x) - 0.5 * x + l * x * x)
            .sum()
    }
}

/// Value and optional gradients of a collapsed bound.
#[derive(Debug, Clone)]
pub struct BoundEval {
    pub value: f64,
    /// ∂/∂(log θ) in `KernelHyperparams::active_params` order.
    pub grad_theta: Option<DVector<f64>>,
    /// ∂/∂ξ (JJ bound only).
    pub grad_xi: Option<DVector<f64>>,
    /// Lower Cholesky factor of B = 2 K_mn W K_nm + K_mm.
    pub chol_b: DMatrix<f64>,
}

fn check_labels(blocks: &CovBlocks, y: &DVector<f64>) -> Result<()> {
    check_dims("labels vs data points", y.len(), blocks.n())?;
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
    }
    Ok(())
}

/// J(μ, Σ, ξ, θ): the expected JJ bound under q(f) minus KL(q(u) || p(u)).
pub fn elbo_full_j(blocks: &CovBlocks, state: &VariationalState, xi: &XiState, y: &DVector<f64>) -> Result<f64> {
    check_labels(blocks, y)?;
    check_dims("ξ vs data points", xi.len(), blocks.n())?;
    let mm = marginal_moments(blocks, state)?;
    let mut total = xi.constant_part();
    for i in 0..blocks.n() {
        let l = xi.lambda_diag[i];
        total += 0.5 * y[i] * mm.mean[i] - l * (mm.var[i] + mm.mean[i] * mm.mean[i]);
    }
    Ok(total - kl_normal_vs_prior(state, blocks)?)
}

/// Σ̂ = K_mm B⁻¹ K_mm and μ̂ = ½ K_mm B⁻¹ K_mn y with B = 2 K_mn Λ K_nm + K_mm.
pub fn optimal_variational_jj(blocks: &CovBlocks, xi: &XiState, y: &DVector<f64>) -> Result<VariationalState> {
    check_labels(blocks, y)?;
    optimal_with_weights(blocks, &xi.lambda_diag, y)
}

/// The analytic optimum for an arbitrary diagonal weight in place of Λ(ξ).
pub(crate) fn optimal_with_weights(
    blocks: &CovBlocks,
    weights: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<VariationalState> {
    let col = collapse(blocks, weights, y, 0.125)?;
    Ok(optimal_state(blocks, &col, 0.5))
}

/// ξᵢ = sqrt(mᵢ² + Sᵢ²).
pub fn xi_update_jj(blocks: &CovBlocks, state: &VariationalState) -> Result<XiState> {
    let mm = marginal_moments(blocks, state)?;
    let xi = mm.mean.zip_map(&mm.var, |m, v| (m * m + v).sqrt());
    XiState::new(xi)
}

/// Ĵ(θ, ξ) = Σᵢ(log σ(ξᵢ) − ξᵢ/2 + λᵢξᵢ²) + ⅛ yᵀK_nmB⁻¹K_mn y + ½log|K_mm| − ½log|B| − Tr(ΛK̃).
///
/// Gradients need blocks from [`crate::moments::compute_cov_blocks_with_grads`].
pub fn compact_bound_jj(blocks: &CovBlocks, xi: &XiState, y: &DVector<f64>, want_grads: bool) -> Result<BoundEval> {
    check_labels(blocks, y)?;
    check_dims("ξ vs data points", xi.len(), blocks.n())?;
    let col = collapse(blocks, &xi.lambda_diag, y, 0.125)?;
    let value = xi.constant_part() + col.value;
    let (grad_theta, grad_xi) = if want_grads {
        let g = collapse_grads(blocks, &col, &xi.lambda_diag, y, 0.125)?;
        // d/dξ of the ξ-only part reduces to λ'(ξ)ξ²
        let gx = DVector::from_iterator(
            xi.len(),
            (0..xi.len()).map(|i| lambda_deriv(xi.xi[i]) * (xi.xi[i] * xi.xi[i] + g.d[i])),
        );
        (Some(g.theta), Some(gx))
    } else {
        (None, None)
    };
    let chol_b = &blocks.chol_k_mm * col.chol_c.l();
    Ok(BoundEval { value, grad_theta, grad_xi, chol_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelHyperparams;
    use crate::moments::{compute_cov_blocks, compute_cov_blocks_with_grads};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        y: DVector<f64>,
        theta: KernelHyperparams,
    }

    fn instance(seed: u64, n: usize, m: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let z = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |i, _| if x[(i, 0)] + 0.3 * rng.random_range(-1.0..1.0) > 0.0 { 1.0 } else { -1.0 });
        let theta = KernelHyperparams::squared_exponential(rng.random_range(0.5..2.0), rng.random_range(0.5..1.5))
            .with_noise(0.05);
        Instance { x, z, y, theta }
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_fn(0.0), 0.125);
        assert!((lambda_fn(2.0) - 1.0f64.tanh() / 8.0).abs() < 1e-16);
        assert!((lambda_fn(2.0) - 0.095_199_269_494_470_6).abs() < 1e-15);
        let big = lambda_fn(1e6);
        assert!((big - 2.5e-7).abs() < 1e-15);
        assert!(lambda_fn(1e5) > big);
        // continuity across the series switch
        let lo = lambda_fn(SERIES_SWITCH);
        let hi = (0.5 * SERIES_SWITCH * (1.0 + 1e-12)).tanh() / (4.0 * SERIES_SWITCH * (1.0 + 1e-12));
        assert!((lo - hi).abs() < 1e-13);
    }

    #[test]
    fn lambda_derivative_matches_finite_differences() {
        for &x in &[1e-5f64, 5e-4, 0.3, 2.0, 9.0] {
            let h = 1e-6 * x.max(1e-3);
            let fd = (lambda_fn(x + h) - lambda_fn(x - h)) / (2.0 * h);
            assert!((fd - lambda_deriv(x)).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn scalar_bound_values() {
        assert!((jj_scalar_bound(0.0, 0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((jj_scalar_bound(3.0, 3.0) - log_sigmoid(3.0)).abs() < 1e-15);
        assert!((log_sigmoid(3.0) + 0.048_587_351_573_742_06).abs() < 1e-15);
        let v = jj_scalar_bound(0.0, 2.0);
        let direct = -1.0 + log_sigmoid(2.0) + lambda_fn(2.0) * 4.0;
        assert!((v - direct).abs() < 1e-15);
        assert!((v + 0.746_130_933_065_09).abs() < 1e-12);
        assert!(v < -std::f64::consts::LN_2);
    }

    #[test]
    fn printed_multiplier_breaks_the_bound() {
        // tanh(ξ)/(4ξ) in place of tanh(ξ/2)/(4ξ)
        let xi: f64 = 2.0;
        let wrong = -xi / 2.0 + log_sigmoid(xi) + xi.tanh() / (4.0 * xi) * xi * xi;
        assert!((wrong + 0.644_914_221_005_064).abs() < 1e-12);
        assert!(wrong - log_sigmoid(0.0) > 0.048);
    }

    #[test]
    fn xi_update_at_prior() {
        let inst = instance(1, 5, 5);
        let th = inst.theta.clone().with_noise(0.0).with_jitter(1e-9);
        let b = compute_cov_blocks(&inst.x, &inst.x, &th).unwrap();
        let st = VariationalState { mu: DVector::zeros(5), sigma: b.k_mm_jittered() };
        let xi = xi_update_jj(&b, &st).unwrap();
        for i in 0..5 {
            assert!((xi.xi[i] - th.variance.sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_point_gets_zero_xi() {
        let xi = XiState::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(xi.lambda_diag[0], 0.125);
        assert!(XiState::new(DVector::from_vec(vec![-1.0])).is_err());
    }

    #[test]
    fn zero_weights_give_prior_optimum() {
        let inst = instance(2, 6, 3);
        let b = compute_cov_blocks(&inst.x, &inst.z, &inst.theta).unwrap();
        let st = optimal_with_weights(&b, &DVector::zeros(6), &inst.y).unwrap();
        assert!((&st.sigma - b.k_mm_jittered()).amax() < 1e-12);
        let half_kmn_y = b.k_nm.tr_mul(&inst.y) * 0.5;
        assert!((&st.mu - half_kmn_y).amax() < 1e-12);
    }

    #[test]
    fn structural_identity_matches_nested_inverses() {
        let inst = instance(3, 8, 4);
        let b = compute_cov_blocks(&inst.x, &inst.z, &inst.theta).unwrap();
        let xi = XiState::new(DVector::from_fn(8, |i, _| 0.3 + 0.2 * i as f64)).unwrap();
        let st = optimal_variational_jj(&b, &xi, &inst.y).unwrap();
        let kinv = b.k_mm_jittered().try_inverse().unwrap();
        let lam = DMatrix::from_diagonal(&xi.lambda_diag);
        let prec = &kinv * b.k_nm.transpose() * &lam * &b.k_nm * &kinv * 2.0 + &kinv;
        let sigma = prec.try_inverse().unwrap();
        let mu = &sigma * &kinv * b.k_nm.transpose() * &inst.y * 0.5;
        assert!((&sigma - &st.sigma).amax() < 1e-9);
        assert!((&mu - &st.mu).amax() < 1e-9);
    }

    #[test]
    fn empty_data_gives_minus_kl() {
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let x = DMatrix::<f64>::zeros(0, 1);
        let th = KernelHyperparams::squared_exponential(1.0, 1.0);
        let b = compute_cov_blocks(&x, &z, &th).unwrap();
        let st = VariationalState { mu: DVector::from_vec(vec![0.3, -0.2]), sigma: DMatrix::identity(2, 2) * 0.5 };
        let xi = XiState::new(DVector::zeros(0)).unwrap();
        let j = elbo_full_j(&b, &st, &xi, &DVector::zeros(0)).unwrap();
        assert!((j + kl_normal_vs_prior(&st, &b).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn xi_update_never_decreases_j() {
        let inst = instance(4, 10, 4);
        let b = compute_cov_blocks(&inst.x, &inst.z, &inst.theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10 {
            let st = VariationalState {
                mu: DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)),
                sigma: DMatrix::identity(4, 4) * rng.random_range(0.1..1.0),
            };
            let old = XiState::new(DVector::from_fn(10, |_, _| rng.random_range(0.0..3.0))).unwrap();
            let new = xi_update_jj(&b, &st).unwrap();
            let j_old = elbo_full_j(&b, &st, &old, &inst.y).unwrap();
            let j_new = elbo_full_j(&b, &st, &new, &inst.y).unwrap();
            assert!(j_new >= j_old - 1e-10);
        }
    }

    #[test]
    fn compact_bound_equals_j_at_optimum() {
        let inst = instance(5, 9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut offsets = Vec::new();
        for _ in 0..3 {
            let th = inst
                .theta
                .with_log_params(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), (0.05f64).ln()]);
            let b = compute_cov_blocks(&inst.x, &inst.z, &th).unwrap();
            let xi = XiState::new(DVector::from_fn(9, |_, _| rng.random_range(0.0..3.0))).unwrap();
            let st = optimal_variational_jj(&b, &xi, &inst.y).unwrap();
            let j = elbo_full_j(&b, &st, &xi, &inst.y).unwrap();
            let jhat = compact_bound_jj(&b, &xi, &inst.y, false).unwrap().value;
            offsets.push(j - jhat);
        }
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn compact_gradients_match_finite_differences() {
        let inst = instance(6, 6, 3);
        let xi = XiState::new(DVector::from_vec(vec![0.4, 1.1, 0.0, 2.3, 0.7, 1.5])).unwrap();
        let b = compute_cov_blocks_with_grads(&inst.x, &inst.z, &inst.theta).unwrap();
        let ev = compact_bound_jj(&b, &xi, &inst.y, true).unwrap();
        let gt = ev.grad_theta.unwrap();
        let base = inst.theta.log_params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let f = |p: &[f64]| {
                let bb = compute_cov_blocks(&inst.x, &inst.z, &inst.theta.with_log_params(p)).unwrap();
                compact_bound_jj(&bb, &xi, &inst.y, false).unwrap().value
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - gt[k]).abs() < 1e-4 * fd.abs().max(1.0), "θ[{k}]: {fd} vs {}", gt[k]);
        }
        let gx = ev.grad_xi.unwrap();
        for i in 0..6 {
            let hx = 1e-6;
            let mut up = xi.xi.clone();
            up[i] += hx;
            let mut dn = xi.xi.clone();
            dn[i] = (dn[i] - hx).max(0.0);
            let step = up[i] - dn[i];
            let f = |v: DVector<f64>| compact_bound_jj(&b, &XiState::new(v).unwrap(), &inst.y, false).unwrap().value;
            let fd = (f(up) - f(dn)) / step;
            assert!((fd - gx[i]).abs() < 1e-4 * fd.abs().max(1.0), "ξ[{i}]: {fd} vs {}", gx[i]);
        }
    }

    #[test]
    fn xi_gradient_vanishes_at_fixed_point() {
        let inst = instance(7, 8, 3);
        let b = compute_cov_blocks_with_grads(&inst.x, &inst.z, &inst.theta).unwrap();
        let mut xi = XiState::new(DVector::from_element(8, 1.0)).unwrap();
        for _ in 0..200 {
            let st = optimal_variational_jj(&b, &xi, &inst.y).unwrap();
            xi = xi_update_jj(&b, &st).unwrap();
        }
        let g = compact_bound_jj(&b, &xi, &inst.y, true).unwrap().grad_xi.unwrap();
        assert!(g.amax() < 1e-6, "{g}");
    }

    proptest::proptest! {
        #[test]
        fn scalar_bound_is_below_log_sigmoid(t in -30.0f64..30.0, xi in 0.0f64..30.0) {
            proptest::prop_assert!(jj_scalar_bound(t, xi) <= log_sigmoid(t) + 1e-12);
            proptest::prop_assert!((jj_scalar_bound(t, t.abs()) - log_sigmoid(t)).abs() < 1e-10);
        }
    }
}
