//! Local second-order Taylor approximation of log σ(y f) around expansion points ξ.
//!
//! Unlike the Jaakkola–Jordan bound this is not a global lower bound; ξ is signed
//! and the fixed point is ξᵢ = mᵢ.

use nalgebra::DVector;

use crate::bound_jj::BoundEval;
use crate::collapsed::{collapse, collapse_grads, optimal_state};
use crate::error::{check_dims, Result};
use crate::logistic::{log_sigmoid, sigmoid};
use crate::moments::{kl_normal_vs_prior, marginal_moments, CovBlocks, VariationalState};

/// ψ(ξ), φ(ξ) and v(ξ) = φ(ξ) + 2Ψ(ξ)ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorWeights {
    pub psi_diag: DVector<f64>,
    pub phi: DVector<f64>,
    pub v: DVector<f64>,
}

pub fn taylor_scalar_terms(xi: &DVector<f64>, y: &DVector<f64>) -> TaylorWeights {
    let n = xi.len();
    let mut psi_diag = DVector::zeros(n);
    let mut phi = DVector::zeros(n);
    for i in 0..n {
        let t = y[i] * xi[i];
        // e^t/(1+e^t)² = σ(t)σ(−t), 1/(1+e^t) = σ(−t)
        psi_diag[i] = 0.5 * y[i] * y[i] * sigmoid(t) * sigmoid(-t);
        phi[i] = y[i] * sigmoid(-t);
    }
    let v = &phi + psi_diag.component_mul(xi) * 2.0;
    TaylorWeights { psi_diag, phi, v }
}

/// The Taylor expansion of log σ(y f) at ξ, evaluated at f.
pub fn taylor_expansion(f: f64, xi: f64, y: f64) -> f64 {
    let t = y * xi;
    let psi = 0.5 * y * y * sigmoid(t) * sigmoid(-t);
    let phi = y * sigmoid(-t);
    log_sigmoid(t) + phi * (f - xi) - psi * (f - xi) * (f - xi)
}

/// The approximate ELBO: Σᵢ E_q(fᵢ)[Taylor expansion at ξᵢ] − KL(q(u) || p(u)).
pub fn elbo_taylor_approx(
    blocks: &CovBlocks,
    state: &VariationalState,
    xi: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dims("ξ vs data points", xi.len(), blocks.n())?;
    check_dims("labels vs data points", y.len(), blocks.n())?;
    let w = taylor_scalar_terms(xi, y);
    let mm = marginal_moments(blocks, state)?;
    let mut total = 0.0;
    for i in 0..blocks.n() {
        let dm = mm.mean[i] - xi[i];
        total += log_sigmoid(y[i] * xi[i]) + w.phi[i] * dm - w.psi_diag[i] * (dm * dm + mm.var[i]);
    }
    Ok(total - kl_normal_vs_prior(state, blocks)?)
}

/// Σ̂ = K_mm B⁻¹ K_mm and μ̂ = Σ̂ K_mm⁻¹ K_mn v with B = 2 K_mn Ψ K_nm + K_mm.
pub fn optimal_variational_taylor(blocks: &CovBlocks, w: &TaylorWeights) -> Result<VariationalState> {
    let col = collapse(blocks, &w.psi_diag, &w.v, 0.5)?;
    Ok(optimal_state(blocks, &col, 1.0))
}

/// Σᵢ(log σ(yᵢξᵢ) − φᵢξᵢ − ψᵢξᵢ²): the ξ-only part of the approximate bound that
/// [`compact_bound_taylor`] leaves out.
pub fn taylor_xi_offset(xi: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let w = taylor_scalar_terms(xi, y);
    (0..xi.len()).map(|i| log_sigmoid(y[i] * xi[i]) - w.phi[i] * xi[i] - w.psi_diag[i] * xi[i] * xi[i]).sum()
}

/// ξᵢ = mᵢ.
pub fn xi_update_taylor(blocks: &CovBlocks, state: &VariationalState) -> Result<DVector<f64>> {
    Ok(marginal_moments(blocks, state)?.mean)
}

/// J̃(θ; ξ) = ½ vᵀK_nmB⁻¹K_mn v + ½log|K_mm| − ½log|B| − Tr(ΨK̃).
///
/// The omitted terms Σᵢ(log σ(yᵢξᵢ) − φᵢξᵢ − ψᵢξᵢ²) depend on ξ but not on θ.
pub fn compact_bound_taylor(
    blocks: &CovBlocks,
    xi: &DVector<f64>,
    y: &DVector<f64>,
    want_grads: bool,
) -> Result<BoundEval> {
    check_dims("ξ vs data points", xi.len(), blocks.n())?;
    check_dims("labels vs data points", y.len(), blocks.n())?;
    let w = taylor_scalar_terms(xi, y);
    let col = collapse(blocks, &w.psi_diag, &w.v, 0.5)?;
    let grad_theta = if want_grads {
        Some(collapse_grads(blocks, &col, &w.psi_diag, &w.v, 0.5)?.theta)
    } else {
        None
    };
    let chol_b = &blocks.chol_k_mm * col.chol_c.l();
    Ok(BoundEval { value: col.value, grad_theta, grad_xi: None, chol_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelHyperparams;
    use crate::moments::{compute_cov_blocks, compute_cov_blocks_with_grads};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, KernelHyperparams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let z = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |i, _| if x[(i, 1)] > 0.2 { 1.0 } else { -1.0 });
        (x, z, y, KernelHyperparams::squared_exponential(1.2, 0.9).with_noise(0.02))
    }

    #[test]
    fn weights_at_zero() {
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let w = taylor_scalar_terms(&DVector::zeros(2), &y);
        for i in 0..2 {
            assert_eq!(w.psi_diag[i], 0.125);
            assert_eq!(w.phi[i], y[i] / 2.0);
            assert_eq!(w.v[i], y[i] / 2.0);
        }
    }

    #[test]
    fn weights_saturate_and_stay_finite() {
        let w = taylor_scalar_terms(&DVector::from_vec(vec![40.0, 700.0, -700.0]), &DVector::from_vec(vec![1.0, 1.0, 1.0]));
        assert!(w.psi_diag[0] < 1e-17 && w.phi[0] < 1e-17);
        assert!(w.psi_diag.iter().chain(w.phi.iter()).chain(w.v.iter()).all(|v| v.is_finite()));
        assert!(w.psi_diag[1] > 0.0);
        assert!((w.phi[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psi_reference_value() {
        let w = taylor_scalar_terms(&DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![-1.0]));
        let e = (-1.0f64).exp();
        assert!((w.psi_diag[0] - e / (2.0 * (1.0 + e) * (1.0 + e))).abs() < 1e-16);
        assert!((w.psi_diag[0] - 0.098_305_966_620_740_94).abs() < 1e-15);
    }

    #[test]
    fn expansion_error_is_cubic() {
        for &(xi, y) in &[(0.0, 1.0), (1.3, -1.0), (-2.0, 1.0)] {
            for &d in &[-1e-2, -3e-3, 5e-3, 1e-2] {
                let f = xi + d;
                assert!((taylor_expansion(f, xi, y) - log_sigmoid(y * f)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_curvature_gives_prior_optimum() {
        let (x, z, y, th) = setup(1, 6, 3);
        let b = compute_cov_blocks(&x, &z, &th).unwrap();
        let v = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
        let w = TaylorWeights { psi_diag: DVector::zeros(6), phi: v.clone(), v: v.clone() };
        let st = optimal_variational_taylor(&b, &w).unwrap();
        assert!((&st.sigma - b.k_mm_jittered()).amax() < 1e-12);
        assert!((&st.mu - b.k_nm.tr_mul(&v)).amax() < 1e-12);
        let _ = y;
    }

    #[test]
    fn structural_identity_matches_nested_inverses() {
        let (x, z, y, th) = setup(2, 8, 4);
        let b = compute_cov_blocks(&x, &z, &th).unwrap();
        let xi = DVector::from_fn(8, |i, _| (i as f64 - 3.5) * 0.4);
        let w = taylor_scalar_terms(&xi, &y);
        let st = optimal_variational_taylor(&b, &w).unwrap();
        let kinv = b.k_mm_jittered().try_inverse().unwrap();
        let psi = DMatrix::from_diagonal(&w.psi_diag);
        let sigma = (&kinv * b.k_nm.transpose() * &psi * &b.k_nm * &kinv * 2.0 + &kinv).try_inverse().unwrap();
        let mu = &sigma * &kinv * b.k_nm.transpose() * &w.v;
        assert!((&sigma - &st.sigma).amax() < 1e-9);
        assert!((&mu - &st.mu).amax() < 1e-9);
    }

    #[test]
    fn collapsed_value_plus_xi_offset_is_the_optimum() {
        let (x, z, y, _) = setup(5, 9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fixed_xi = DVector::from_fn(9, |_, _| rng.random_range(-2.0..2.0));
        let mut at_fixed_xi = Vec::new();
        for _ in 0..5 {
            let th = KernelHyperparams::squared_exponential(rng.random_range(0.5..2.0), rng.random_range(0.5..1.5))
                .with_noise(rng.random_range(0.0..0.1));
            let b = compute_cov_blocks(&x, &z, &th).unwrap();
            for xi in [fixed_xi.clone(), DVector::from_fn(9, |_, _| rng.random_range(-3.0..3.0))] {
                let st = optimal_variational_taylor(&b, &taylor_scalar_terms(&xi, &y)).unwrap();
                let full = elbo_taylor_approx(&b, &st, &xi, &y).unwrap();
                let collapsed = compact_bound_taylor(&b, &xi, &y, false).unwrap().value;
                assert!((full - collapsed - taylor_xi_offset(&xi, &y)).abs() < 1e-8);
                if xi == fixed_xi {
                    at_fixed_xi.push(full - collapsed);
                }
            }
        }
        let spread = at_fixed_xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - at_fixed_xi.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-8, "{spread}");
    }

    #[test]
    fn xi_update_properties() {
        let (x, z, _, th) = setup(3, 7, 3);
        let b = compute_cov_blocks(&x, &z, &th).unwrap();
        let zero = VariationalState { mu: DVector::zeros(3), sigma: DMatrix::identity(3, 3) };
        assert_eq!(xi_update_taylor(&b, &zero).unwrap(), DVector::zeros(7));
        let st = VariationalState { mu: DVector::from_vec(vec![0.5, -1.0, 0.2]), sigma: DMatrix::identity(3, 3) };
        assert_eq!(xi_update_taylor(&b, &st).unwrap(), xi_update_taylor(&b, &st).unwrap());
    }

    #[test]
    fn xi_update_is_stationary_for_the_approximate_bound() {
        let (x, z, y, th) = setup(4, 6, 3);
        let b = compute_cov_blocks(&x, &z, &th).unwrap();
        let st = VariationalState { mu: DVector::from_vec(vec![0.7, -0.4, 1.1]), sigma: DMatrix::identity(3, 3) * 0.3 };
        let xi = xi_update_taylor(&b, &st).unwrap();
        for i in 0..6 {
            let h = 1e-5;
            let mut up = xi.clone();
            up[i] += h;
            let mut dn = xi.clone();
            dn[i] -= h;
            let fd = (elbo_taylor_approx(&b, &st, &up, &y).unwrap() - elbo_taylor_approx(&b, &st, &dn, &y).unwrap())
                / (2.0 * h);
            // at ξ = m the derivative is −ψ'(ξ)·S², the residual curvature term
            let mm = marginal_moments(&b, &st).unwrap();
            let t = y[i] * xi[i];
            let s = sigmoid(t);
            let dpsi = 0.5 * y[i] * s * (1.0 - s) * (1.0 - 2.0 * s);
            assert!((fd + dpsi * mm.var[i]).abs() < 1e-6, "i={i}: {fd}");
        }
    }

    #[test]
    fn empty_data_value_is_zero() {
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = compute_cov_blocks(&DMatrix::zeros(0, 1), &z, &KernelHyperparams::squared_exponential(1.0, 1.0)).unwrap();
        let ev = compact_bound_taylor(&b, &DVector::zeros(0), &DVector::zeros(0), false).unwrap();
        assert!(ev.value.abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (x, z, y, th) = setup(5, 6, 3);
        let xi = DVector::from_vec(vec![0.3, -1.2, 0.8, 0.0, 2.0, -0.5]);
        let b = compute_cov_blocks_with_grads(&x, &z, &th).unwrap();
        let g = compact_bound_taylor(&b, &xi, &y, true).unwrap().grad_theta.unwrap();
        let base = th.log_params();
        for k in 0..base.len() {
            let h = 1e-5;
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let f = |p: &[f64]| {
                let bb = compute_cov_blocks(&x, &z, &th.with_log_params(p)).unwrap();
                compact_bound_taylor(&bb, &xi, &y, false).unwrap().value
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4 * fd.abs().max(1.0), "θ[{k}]: {fd} vs {}", g[k]);
        }
    }

    proptest::proptest! {
        #[test]
        fn psi_bounded(xi in -700.0f64..700.0, pos in proptest::bool::ANY) {
            let y = if pos { 1.0 } else { -1.0 };
            let w = taylor_scalar_terms(&DVector::from_vec(vec![xi]), &DVector::from_vec(vec![y]));
            proptest::prop_assert!(w.psi_diag[0] > 0.0 && w.psi_diag[0] <= 0.125);
            proptest::prop_assert!(w.phi[0].abs() < 1.0 || xi.abs() > 36.0);
            proptest::prop_assert!((w.v[0] - (w.phi[0] + 2.0 * w.psi_diag[0] * xi)).abs() < 1e-12);
        }
    }
}
