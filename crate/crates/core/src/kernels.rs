//! Stationary covariance functions and their hyperparameter derivatives.
//!
//! Two families are supported:
//!
//! * squared exponential, `k(r) = σ² exp(-r²/l²)` (no factor 2 under `l²`);
//! * Matérn, `k(r) = σ² 2^{1-ν}/Γ(ν) z^ν K_ν(z)` with `z = √(2ν) r / l`.
//!
//! Positive hyperparameters are optimized in log-space. The noise variance is
//! added only to the diagonal of the training covariance `K_nn`; the jitter is
//! added only to `K_mm` and is never optimized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
    Matern,
}

/// A hyperparameter that can be optimized (always in log-space).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperParam {
    Variance,
    LengthScale,
    Smoothness,
    NoiseVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub family: KernelFamily,
    /// Signal variance σ².
    pub variance: f64,
    pub length_scale: f64,
    /// Matérn ν; ignored by the squared exponential.
    pub smoothness: f64,
    /// Added to diag(K_nn) only. Zero disables the noise term (and its optimization).
    pub noise_variance: f64,
    /// Diagonal stabilizer for K_mm.
    pub jitter: f64,
}

impl KernelHyperparams {
    pub fn squared_exponential(variance: f64, length_scale: f64) -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            variance,
            length_scale,
            smoothness: 0.5,
            noise_variance: 0.0,
            jitter: 1e-6 * variance,
        }
    }

    pub fn matern(variance: f64, length_scale: f64, smoothness: f64) -> Self {
        Self {
            family: KernelFamily::Matern,
            smoothness,
            ..Self::squared_exponential(variance, length_scale)
        }
    }

    pub fn with_noise(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.variance) {
            return Err(Error::InvalidArgument(format!("variance must be > 0, got {}", self.variance)));
        }
        if !ok(self.length_scale) {
            return Err(Error::InvalidArgument(format!(
                "length_scale must be > 0, got {}",
                self.length_scale
            )));
        }
        if self.family == KernelFamily::Matern && !ok(self.smoothness) {
            return Err(Error::InvalidArgument(format!(
                "smoothness must be > 0, got {}",
                self.smoothness
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        if !ok(self.jitter) {
            return Err(Error::InvalidArgument(format!("jitter must be > 0, got {}", self.jitter)));
        }
        Ok(())
    }

    /// Hyperparameters exposed to the optimizers, in a fixed order.
    pub fn active_params(&self) -> Vec<HyperParam> {
        let mut p = vec![HyperParam::Variance, HyperParam::LengthScale];
        if self.family == KernelFamily::Matern {
            p.push(HyperParam::Smoothness);
        }
        if self.noise_variance > 0.0 {
            p.push(HyperParam::NoiseVariance);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.active_params().len()
    }

    fn get(&self, p: HyperParam) -> f64 {
        match p {
            HyperParam::Variance => self.variance,
            HyperParam::LengthScale => self.length_scale,
            HyperParam::Smoothness => self.smoothness,
            HyperParam::NoiseVariance => self.noise_variance,
        }
    }

    fn slot(&mut self, p: HyperParam) -> &mut f64 {
        match p {
            HyperParam::Variance => &mut self.variance,
            HyperParam::LengthScale => &mut self.length_scale,
            HyperParam::Smoothness => &mut self.smoothness,
            HyperParam::NoiseVariance => &mut self.noise_variance,
        }
    }

    pub fn log_params(&self) -> Vec<f64> {
        self.active_params().into_iter().map(|p| self.get(p).ln()).collect()
    }

    /// Copy with the active parameters replaced by `exp(log_params)`.
    pub fn with_log_params(&self, log_params: &[f64]) -> Self {
        let mut out = self.clone();
        for (p, &v) in self.active_params().into_iter().zip(log_params) {
            *out.slot(p) = v.exp();
        }
        out
    }

    /// Box bounds on the log-parameters used by the trainers.
    pub fn log_param_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.active_params()
            .into_iter()
            .map(|p| match p {
                HyperParam::Variance => (-12.0, 12.0),
                HyperParam::LengthScale => (-12.0, 12.0),
                HyperParam::Smoothness => ((0.05f64).ln(), (50.0f64).ln()),
                HyperParam::NoiseVariance => (-25.0, 5.0),
            })
            .unzip()
    }
}

/// Trapezoid step for the Bessel integral. The integrand is analytic in a strip of
/// half-width π/2, so the rule converges like exp(-π²/h); large arguments need a
/// finer step because the peak at t = 0 narrows like 1/√x.
fn bessel_step(x: f64) -> f64 {
    0.05f64.min(0.5 / x.sqrt())
}

/// log K_ν(x) for x > 0, from K_ν(x) = ∫₀^∞ exp(-x cosh t) cosh(νt) dt.
pub fn log_bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let nu = nu.abs();
    let log_f = |t: f64| -x * t.cosh() + log_cosh(nu * t);
    // mode of the integrand: x sinh t = ν tanh(νt); for ν = 0 the mode is t = 0
    let t_star = if nu > 0.0 { (nu / x).asinh().max(0.0) } else { 0.0 };
    let peak = log_f(t_star).max(log_f(0.0));
    let h = bessel_step(x);
    let mut sum = 0.5 * (log_f(0.0) - peak).exp();
    let mut t = h;
    loop {
        let lf = log_f(t) - peak;
        sum += lf.exp();
        if t > t_star && lf < -60.0 {
            break;
        }
        t += h;
    }
    peak + (sum * h).ln()
}

fn log_cosh(v: f64) -> f64 {
    let a = v.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// log of the Matérn normalizer 2^{1-ν}/Γ(ν).
fn matern_log_norm(nu: f64) -> f64 {
    (1.0 - nu) * std::f64::consts::LN_2 - libm::lgamma(nu)
}

fn matern_scaled(r: f64, theta: &KernelHyperparams) -> f64 {
    if r == 0.0 {
        return theta.variance;
    }
    let nu = theta.smoothness;
    let z = (2.0 * nu).sqrt() * r / theta.length_scale;
    theta.variance * (matern_log_norm(nu) + nu * z.ln() + log_bessel_k(nu, z)).exp()
}

/// ∂k/∂(log l) for the Matérn family: σ² c z^{ν+1} K_{ν-1}(z).
fn matern_dlog_l(r: f64, theta: &KernelHyperparams) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let nu = theta.smoothness;
    let z = (2.0 * nu).sqrt() * r / theta.length_scale;
    theta.variance * (matern_log_norm(nu) + (nu + 1.0) * z.ln() + log_bessel_k(nu - 1.0, z)).exp()
}

fn profile(sq_dist: f64, theta: &KernelHyperparams) -> f64 {
    match theta.family {
        KernelFamily::SquaredExponential => {
            theta.variance * (-sq_dist / (theta.length_scale * theta.length_scale)).exp()
        }
        KernelFamily::Matern => matern_scaled(sq_dist.sqrt(), theta),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Covariance between two points. The noise variance is not included.
pub fn kernel_eval(x1: &[f64], x2: &[f64], theta: &KernelHyperparams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch { what: "kernel_eval inputs", left: x1.len(), right: x2.len() });
    }
    if x1.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite kernel input".into()));
    }
    theta.validate()?;
    Ok(profile(sq_dist(x1, x2), theta))
}

/// Pairwise squared distances between the rows of `x1` and `x2`.
fn sq_dist_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x1.ncols() != x2.ncols() {
        return Err(Error::DimensionMismatch { what: "feature dimension", left: x1.ncols(), right: x2.ncols() });
    }
    if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite kernel input".into()));
    }
    // columns of the transposes are contiguous points
    let t1 = x1.transpose();
    let t2 = x2.transpose();
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
        sq_dist(t1.column(i).as_slice(), t2.column(j).as_slice())
    }))
}

/// Covariance matrix between the rows of `x1` and `x2`.
///
/// `add_noise_diag` is only allowed when `x1` and `x2` are the same point set.
pub fn kernel_matrix(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    theta: &KernelHyperparams,
    add_noise_diag: bool,
) -> Result<DMatrix<f64>> {
    theta.validate()?;
    if add_noise_diag && x1 != x2 {
        return Err(Error::InvalidArgument(
            "noise may only be added to the covariance of a point set with itself".into(),
        ));
    }
    let mut k = sq_dist_matrix(x1, x2)?.map(|d2| profile(d2, theta));
    if add_noise_diag {
        for i in 0..k.nrows() {
            k[(i, i)] += theta.noise_variance;
        }
    }
    Ok(k)
}

/// diag K(X, X), optionally including the noise variance. Stationary kernels make this constant.
pub fn kernel_diag(n: usize, theta: &KernelHyperparams, with_noise: bool) -> DVector<f64> {
    let noise = if with_noise { theta.noise_variance } else { 0.0 };
    DVector::from_element(n, theta.variance + noise)
}

/// ∂K/∂(log p) for every active hyperparameter p, in `active_params` order.
///
/// The noise variance never enters a cross-covariance so its matrix is zero.
/// The Matérn derivative with respect to ν uses a central difference in log ν.
pub fn kernel_matrix_param_grads(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    theta: &KernelHyperparams,
) -> Result<Vec<DMatrix<f64>>> {
    theta.validate()?;
    let d2 = sq_dist_matrix(x1, x2)?;
    let mut out = Vec::new();
    for p in theta.active_params() {
        let g = match (p, theta.family) {
            (HyperParam::Variance, _) => d2.map(|v| profile(v, theta)),
            (HyperParam::LengthScale, KernelFamily::SquaredExponential) => {
                let l2 = theta.length_scale * theta.length_scale;
                d2.map(|v| profile(v, theta) * 2.0 * v / l2)
            }
            (HyperParam::LengthScale, KernelFamily::Matern) => d2.map(|v| matern_dlog_l(v.sqrt(), theta)),
            (HyperParam::Smoothness, _) => {
                let h = 1e-5f64;
                let mut up = theta.clone();
                up.smoothness = theta.smoothness * h.exp();
                let mut dn = theta.clone();
                dn.smoothness = theta.smoothness * (-h).exp();
                d2.map(|v| (profile(v, &up) - profile(v, &dn)) / (2.0 * h))
            }
            (HyperParam::NoiseVariance, _) => DMatrix::zeros(d2.nrows(), d2.ncols()),
        };
        out.push(g);
    }
    Ok(out)
}

/// ∂ diag K(X,X) / ∂(log p) for every active hyperparameter.
pub fn kernel_diag_param_grads(n: usize, theta: &KernelHyperparams, with_noise: bool) -> Vec<DVector<f64>> {
    theta
        .active_params()
        .into_iter()
        .map(|p| match p {
            HyperParam::Variance => DVector::from_element(n, theta.variance),
            HyperParam::NoiseVariance if with_noise => DVector::from_element(n, theta.noise_variance),
            _ => DVector::zeros(n),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn se_values() {
        let th = KernelHyperparams::squared_exponential(2.5, 0.7);
        assert_eq!(kernel_eval(&[0.3, -1.0], &[0.3, -1.0], &th).unwrap(), 2.5);
        let th = KernelHyperparams::squared_exponential(1.0, 2.0);
        let v = kernel_eval(&[0.0, 0.0], &[2.0, 0.0], &th).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bessel_closed_forms() {
        use std::f64::consts::PI;
        for &x in &[1e-6, 0.01, 0.3, 1.0, 4.0, 30.0, 200.0] {
            let k05 = (PI / (2.0 * x)).sqrt() * (-x).exp();
            let k15 = k05 * (1.0 + 1.0 / x);
            assert!((log_bessel_k(0.5, x) - k05.ln()).abs() < 1e-12, "x={x}");
            assert!((log_bessel_k(1.5, x) - k15.ln()).abs() < 1e-12, "x={x}");
        }
        // K_0(1), K_1(1) reference values (A&S table 9.8)
        assert!((log_bessel_k(0.0, 1.0).exp() - 0.421_024_438_240_708_3).abs() < 1e-14);
        assert!((log_bessel_k(1.0, 1.0).exp() - 0.601_907_230_197_234_6).abs() < 1e-14);
    }

    #[test]
    fn matern_half_is_exponential() {
        let th = KernelHyperparams::matern(1.7, 0.8, 0.5);
        for &r in &[0.0, 1e-3, 0.2, 1.0, 3.5, 10.0] {
            let v = kernel_eval(&[0.0], &[r], &th).unwrap();
            let closed = 1.7 * (-r / 0.8f64).exp();
            assert!((v - closed).abs() < 1e-10, "r={r}: {v} vs {closed}");
        }
    }

    #[test]
    fn matern_large_nu_approaches_se() {
        // ν → ∞ gives exp(-r²/(2l²)); the SE parametrization here uses l² without the 2
        let th = KernelHyperparams::matern(1.0, 1.0, 400.0);
        let v = kernel_eval(&[0.0], &[0.5], &th).unwrap();
        assert!((v - (-0.125f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn noise_diag_single_point() {
        let x = DMatrix::from_row_slice(1, 2, &[0.4, 0.1]);
        let th = KernelHyperparams::squared_exponential(1.0, 1.0).with_noise(0.1);
        let k = kernel_matrix(&x, &x, &th, true).unwrap();
        assert!((k[(0, 0)] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn noise_rejected_for_distinct_sets() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let z = DMatrix::from_row_slice(1, 1, &[1.0]);
        let th = KernelHyperparams::squared_exponential(1.0, 1.0).with_noise(0.1);
        assert!(matches!(kernel_matrix(&x, &z, &th, true), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 2);
        let th = KernelHyperparams::squared_exponential(1.0, 1.0);
        assert!(matches!(kernel_matrix(&a, &b, &th, false), Err(Error::DimensionMismatch { .. })));
        assert!(kernel_eval(&[0.0], &[f64::NAN], &th).is_err());
    }

    #[test]
    fn se_matrix_bounded_and_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut rng, 5, 2);
        let th = KernelHyperparams::squared_exponential(1.0, 0.9);
        let k = kernel_matrix(&x, &x, &th, false).unwrap();
        for i in 0..5 {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..5 {
                assert!(k[(i, j)] > 0.0 && k[(i, j)].abs() <= k[(i, i)]);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let eig = (k + DMatrix::identity(5, 5) * 1e-8).symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }

    fn fd_check(theta: &KernelHyperparams, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1 = random_points(&mut rng, 4, 3);
        let x2 = random_points(&mut rng, 3, 3);
        let grads = kernel_matrix_param_grads(&x1, &x2, theta).unwrap();
        let base = theta.log_params();
        let h = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let kp = kernel_matrix(&x1, &x2, &theta.with_log_params(&up), false).unwrap();
            let km = kernel_matrix(&x1, &x2, &theta.with_log_params(&dn), false).unwrap();
            let fd = (kp - km) / (2.0 * h);
            let err = (&fd - g).amax() / fd.amax().max(1e-12);
            assert!(err < tol, "param {k}: rel err {err}");
        }
    }

    #[test]
    fn se_grads_match_finite_differences() {
        fd_check(&KernelHyperparams::squared_exponential(1.3, 0.8).with_noise(0.05), 1e-6);
    }

    #[test]
    fn matern_grads_match_finite_differences() {
        fd_check(&KernelHyperparams::matern(0.9, 1.4, 1.3), 1e-5);
        fd_check(&KernelHyperparams::matern(0.9, 1.4, 0.5), 1e-5);
    }

    #[test]
    fn variance_grad_is_identity_and_diag_lengthscale_grad_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(&mut rng, 4, 2);
        let th = KernelHyperparams::squared_exponential(2.0, 0.6).with_noise(0.3);
        let k = kernel_matrix(&x, &x, &th, false).unwrap();
        let g = kernel_matrix_param_grads(&x, &x, &th).unwrap();
        assert_eq!(g[0], k);
        for i in 0..4 {
            assert_eq!(g[1][(i, i)], 0.0);
        }
        assert_eq!(g[2].amax(), 0.0);
    }

    #[test]
    fn log_params_roundtrip() {
        let th = KernelHyperparams::matern(2.0, 0.3, 1.5).with_noise(0.01);
        assert_eq!(
            th.active_params(),
            vec![HyperParam::Variance, HyperParam::LengthScale, HyperParam::Smoothness, HyperParam::NoiseVariance]
        );
        let back = th.with_log_params(&th.log_params());
        assert!((back.smoothness - 1.5).abs() < 1e-14);
        assert!((back.noise_variance - 0.01).abs() < 1e-16);
        let se = KernelHyperparams::squared_exponential(1.0, 1.0);
        assert_eq!(se.num_params(), 2);
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        assert!(KernelHyperparams::squared_exponential(-1.0, 1.0).validate().is_err());
        assert!(KernelHyperparams::squared_exponential(1.0, 0.0).validate().is_err());
        assert!(KernelHyperparams::squared_exponential(1.0, 1.0).with_jitter(0.0).validate().is_err());
        assert!(KernelHyperparams::matern(1.0, 1.0, -0.5).validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn kernel_is_exchangeable(a in proptest::collection::vec(-5.0f64..5.0, 3),
                                  b in proptest::collection::vec(-5.0f64..5.0, 3),
                                  l in 0.1f64..4.0, nu in 0.2f64..4.0) {
            for th in [KernelHyperparams::squared_exponential(1.5, l), KernelHyperparams::matern(1.5, l, nu)] {
                let ab = kernel_eval(&a, &b, &th).unwrap();
                let ba = kernel_eval(&b, &a, &th).unwrap();
                proptest::prop_assert_eq!(ab, ba);
                proptest::prop_assert!((0.0..=1.5 + 1e-12).contains(&ab));
            }
        }
    }
}
