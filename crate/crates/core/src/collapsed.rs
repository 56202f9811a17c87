//! Shared algebra of the two collapsed bounds.
//!
//! Both bounds have the form
//!
//! ```text
//! F = α wᵀ K_nm B⁻¹ K_mn w + ½ log|K_mm| − ½ log|B| − Σᵢ dᵢ K̃ᵢᵢ,   B = 2 K_mn D K_nm + K_mm
//! ```
//!
//! with a diagonal weight D = diag(d) ≥ 0 (Λ(ξ) or Ψ(ξ)). With A = L⁻¹K_mn and
//! C = I + 2 A D Aᵀ we have B = L C Lᵀ, so every quantity goes through the
//! well-conditioned m×m matrix C.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dims, Error, Result};
use crate::moments::{CovBlocks, VariationalState};

pub(crate) struct Collapsed {
    /// Cholesky of C = I + 2 A D Aᵀ.
    pub chol_c: Cholesky<f64, Dyn>,
    /// C⁻¹ A w.
    pub c_inv_aw: DVector<f64>,
    /// value of the (w, d)-dependent part of F.
    pub value: f64,
}

fn weighted_gram(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (mut col, &di) in scaled.column_iter_mut().zip(d.iter()) {
        col *= (2.0 * di).sqrt();
    }
    let mut c = &scaled * scaled.transpose();
    for i in 0..c.nrows() {
        c[(i, i)] += 1.0;
    }
    c
}

pub(crate) fn collapse(blocks: &CovBlocks, d: &DVector<f64>, w: &DVector<f64>, alpha: f64) -> Result<Collapsed> {
    check_dims("bound weights vs data points", d.len(), blocks.n())?;
    check_dims("bound targets vs data points", w.len(), blocks.n())?;
    if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("bound weights must be finite and nonnegative".into()));
    }
    let a = &blocks.k_mn_white;
    let c = weighted_gram(a, d);
    let chol_c = Cholesky::new(c).ok_or(Error::SingularBound)?;
    let aw = a * w;
    let c_inv_aw = chol_c.solve(&aw);
    let log_det_c = 2.0 * chol_c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = alpha * aw.dot(&c_inv_aw) - 0.5 * log_det_c - d.dot(&blocks.ktilde_diag);
    Ok(Collapsed { chol_c, c_inv_aw, value })
}

/// Σ̂ = K B⁻¹ K = L C⁻¹ Lᵀ and μ̂ = scale · K B⁻¹ K_mn w = scale · L C⁻¹ A w.
pub(crate) fn optimal_state(blocks: &CovBlocks, col: &Collapsed, scale: f64) -> VariationalState {
    let l = &blocks.chol_k_mm;
    let c_inv_lt = col.chol_c.solve(&l.transpose());
    let mut sigma = l * c_inv_lt;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let mu = l * &col.c_inv_aw * scale;
    VariationalState { mu, sigma }
}

/// Gradients of F with respect to the active log-hyperparameters and to the weights d.
pub(crate) struct CollapsedGrads {
    pub theta: DVector<f64>,
    /// ∂F/∂dᵢ with w held fixed.
    pub d: DVector<f64>,
}

pub(crate) fn collapse_grads(
    blocks: &CovBlocks,
    col: &Collapsed,
    d: &DVector<f64>,
    w: &DVector<f64>,
    alpha: f64,
) -> Result<CollapsedGrads> {
    let grads = blocks
        .grads
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("blocks were computed without hyperparameter derivatives".into()))?;
    let l = &blocks.chol_k_mm;
    let a = &blocks.k_mn_white;
    let n = blocks.n();

    // c = B⁻¹ K_mn w = L⁻ᵀ C⁻¹ A w, r = K_nm c
    let c = l.tr_solve_lower_triangular(&col.c_inv_aw).ok_or(Error::SingularBound)?;
    let r = a.tr_mul(&col.c_inv_aw);
    // C⁻¹ A, E = L⁻ᵀ C⁻¹ A (so K_nm B⁻¹ = Eᵀ), G = K_nm K_mm⁻¹ = (L⁻ᵀ A)ᵀ
    let c_inv_a = col.chol_c.solve(a);
    let e = l.tr_solve_lower_triangular(&c_inv_a).ok_or(Error::SingularBound)?;
    let g_t = l.tr_solve_lower_triangular(a).ok_or(Error::SingularBound)?;

    // adjoint of K_nm, stored transposed (m×n) to match column-major access
    let mut n_bar_t = DMatrix::zeros(blocks.m(), n);
    for i in 0..n {
        let coeff_c = 2.0 * alpha * w[i] - 4.0 * alpha * d[i] * r[i];
        let mut col_i = n_bar_t.column_mut(i);
        col_i.axpy(coeff_c, &c, 0.0);
        col_i.axpy(-2.0 * d[i], &e.column(i), 1.0);
        col_i.axpy(2.0 * d[i], &g_t.column(i), 1.0);
    }

    // adjoint of K_mm: −α c cᵀ + ½K⁻¹ − ½B⁻¹ − Gᵀ D G
    let m = blocks.m();
    let k_inv = blocks.k_mm_inv();
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(m, m)).ok_or(Error::SingularBound)?;
    let b_inv = l_inv.tr_mul(&col.chol_c.solve(&l_inv));
    let mut gd = g_t.clone();
    for (mut colv, &di) in gd.column_iter_mut().zip(d.iter()) {
        colv *= di;
    }
    let gtdg = &gd * g_t.transpose();
    let m_bar = (&k_inv - &b_inv) * 0.5 - &c * c.transpose() * alpha - gtdg;

    let n_bar = n_bar_t.transpose();
    let theta = DVector::from_iterator(
        grads.d_k_nm.len(),
        (0..grads.d_k_nm.len()).map(|p| {
            n_bar.dot(&grads.d_k_nm[p]) + m_bar.dot(&grads.d_k_mm[p]) - d.dot(&grads.d_k_nn_diag[p])
        }),
    );

    // ∂F/∂dᵢ = −2α rᵢ² − kᵢᵀB⁻¹kᵢ − K̃ᵢᵢ, with kᵢᵀB⁻¹kᵢ = aᵢᵀC⁻¹aᵢ
    let d_grad = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            -2.0 * alpha * r[i] * r[i] - a.column(i).dot(&c_inv_a.column(i)) - blocks.ktilde_diag[i]
        }),
    );
    Ok(CollapsedGrads { theta, d: d_grad })
}
