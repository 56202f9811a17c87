//! Browser demo: logistic bound explorer, kernel profiles and a 2-D classifier field.
//!
//! Each exported operation has a plain Rust twin (`*_impl`) so the logic is
//! testable without a JavaScript host.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vigp::bound_jj::jj_scalar_bound;
use vigp::bound_taylor::taylor_expansion;
use vigp::data::Dataset;
use vigp::inducing::{kmeans_inducing, DEFAULT_MAX_ITER};
use vigp::kernels::{kernel_eval, KernelHyperparams};
use vigp::logistic::log_sigmoid;
use vigp::trainers::{evaluate_accuracy, fit, FittedModel, Strategy, TrainConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| lo + step * i as f64)
}

/// Rows of `[t, log σ(t), JJ bound at ξ, Taylor expansion at ξ]`, flattened.
pub fn bound_curves_impl(xi: f64, t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(xi.is_finite() && t_min.is_finite() && t_max.is_finite() && t_min < t_max) || n < 2 {
        return Err("need finite ξ, t_min < t_max and at least two points".into());
    }
    Ok(linspace(t_min, t_max, n)
        .flat_map(|t| [t, log_sigmoid(t), jj_scalar_bound(t, xi.abs()), taylor_expansion(t, xi, 1.0)])
        .collect())
}

#[wasm_bindgen]
pub fn bound_curves(xi: f64, t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    bound_curves_impl(xi, t_min, t_max, n).map_err(js_err)
}

/// Rows of `[r, k(r)]` for r in [0, r_max]; family is "se" or "matern".
pub fn kernel_profile_impl(
    family: &str,
    variance: f64,
    length_scale: f64,
    smoothness: f64,
    r_max: f64,
    n: usize,
) -> Result<Vec<f64>, String> {
    let theta = match family {
        "se" => KernelHyperparams::squared_exponential(variance, length_scale),
        "matern" => KernelHyperparams::matern(variance, length_scale, smoothness),
        other => return Err(format!("unknown kernel family '{other}'")),
    };
    theta.validate().map_err(|e| e.to_string())?;
    if !(r_max.is_finite() && r_max > 0.0) || n < 2 {
        return Err("need r_max > 0 and at least two points".into());
    }
    let mut out = Vec::with_capacity(2 * n);
    for r in linspace(0.0, r_max, n) {
        out.push(r);
        out.push(kernel_eval(&[0.0], &[r], &theta).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn kernel_profile(
    family: &str,
    variance: f64,
    length_scale: f64,
    smoothness: f64,
    r_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    kernel_profile_impl(family, variance, length_scale, smoothness, r_max, n).map_err(js_err)
}

/// Synthetic 2-D data and the classifier fitted to it.
#[wasm_bindgen]
pub struct ClassifierDemo {
    data: Dataset,
    model: Option<FittedModel>,
}

impl ClassifierDemo {
    /// `layout`: "blobs" (two Gaussian clusters) or "xor" (four clusters, diagonal classes).
    pub fn generate(layout: &str, seed: u64, n_per_class: usize, noise: f64) -> Result<Self, String> {
        if n_per_class < 2 || !(noise.is_finite() && noise > 0.0) {
            return Err("need at least two points per class and positive noise".into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, noise).map_err(|e| e.to_string())?;
        let centres: &[(f64, f64, f64)] = match layout {
            "blobs" => &[(-1.5, -1.5, -1.0), (1.5, 1.5, 1.0)],
            "xor" => &[(-1.5, -1.5, 1.0), (1.5, 1.5, 1.0), (-1.5, 1.5, -1.0), (1.5, -1.5, -1.0)],
            other => return Err(format!("unknown layout '{other}'")),
        };
        let per_centre = (2 * n_per_class).div_ceil(centres.len());
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &(cx, cy, label) in centres {
            for _ in 0..per_centre {
                rows.push(cx + nrm.sample(&mut rng));
                rows.push(cy + nrm.sample(&mut rng));
                labels.push(label);
            }
        }
        // shuffle so minibatches mix classes
        let n = labels.len();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
            rows.swap(2 * i, 2 * j);
            rows.swap(2 * i + 1, 2 * j + 1);
        }
        let data = Dataset::new(DMatrix::from_row_slice(n, 2, &rows), DVector::from_vec(labels)).map_err(|e| e.to_string())?;
        Ok(Self { data, model: None })
    }

    /// Fits and returns `[training accuracy, final bound, outer iterations]`.
    pub fn fit_impl(&mut self, strategy: &str, m: usize, iters: usize, length_scale: f64) -> Result<Vec<f64>, String> {
        let strategy: Strategy = strategy.parse().map_err(|e: vigp::Error| e.to_string())?;
        if m == 0 || m > self.data.n() {
            return Err(format!("m must be between 1 and {}", self.data.n()));
        }
        let z = kmeans_inducing(&self.data.x, m, 0, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
        let mut cfg = TrainConfig::new(strategy, KernelHyperparams::squared_exponential(1.0, length_scale).with_noise(0.01));
        cfg.max_iters = iters;
        cfg.adadelta.step_rate = 1.0;
        let (model, trace) = fit(&self.data, &z, &cfg, None).map_err(|e| e.to_string())?;
        let acc = evaluate_accuracy(&model, &self.data, 32).map_err(|e| e.to_string())?;
        let last = trace.records.last().expect("trace has the initial record");
        self.model = Some(model);
        Ok(vec![acc, last.elbo, last.outer_iter as f64])
    }

    /// p(y = +1) on an nx × ny grid over the box, row by row from y_min.
    pub fn probability_grid_impl(
        &self,
        nx: usize,
        ny: usize,
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    ) -> Result<Vec<f64>, String> {
        let model = self.model.as_ref().ok_or("fit the classifier first")?;
        if nx < 2 || ny < 2 {
            return Err("grid needs at least 2 × 2 cells".into());
        }
        let pts: Vec<f64> = linspace(y_min, y_max, ny).flat_map(|y| linspace(x_min, x_max, nx).flat_map(move |x| [x, y])).collect();
        model.predict_proba(&DMatrix::from_row_slice(nx * ny, 2, &pts), 32).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl ClassifierDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(layout: &str, seed: u32, n_per_class: usize, noise: f64) -> Result<ClassifierDemo, JsError> {
        Self::generate(layout, seed as u64, n_per_class, noise).map_err(js_err)
    }

    pub fn fit(&mut self, strategy: &str, m: usize, iters: usize, length_scale: f64) -> Result<Vec<f64>, JsError> {
        self.fit_impl(strategy, m, iters, length_scale).map_err(js_err)
    }

    #[wasm_bindgen(js_name = probabilityGrid)]
    pub fn probability_grid(
        &self,
        nx: usize,
        ny: usize,
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    ) -> Result<Vec<f64>, JsError> {
        self.probability_grid_impl(nx, ny, x_min, x_max, y_min, y_max).map_err(js_err)
    }

    /// Rows of `[x1, x2, label]`, flattened.
    pub fn points(&self) -> Vec<f64> {
        (0..self.data.n()).flat_map(|i| [self.data.x[(i, 0)], self.data.x[(i, 1)], self.data.y[i]]).collect()
    }

    /// Rows of `[z1, z2]` of the fitted inducing inputs, flattened.
    pub fn inducing(&self) -> Vec<f64> {
        match &self.model {
            Some(m) => m.z.z.row_iter().flat_map(|r| [r[0], r[1]]).collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_curves_lie_below_log_sigmoid() {
        let rows = bound_curves_impl(2.0, -6.0, 6.0, 121).unwrap();
        assert_eq!(rows.len(), 4 * 121);
        for r in rows.chunks(4) {
            assert!(r[2] <= r[1] + 1e-12);
            if (r[0].abs() - 2.0).abs() < 1e-12 {
                assert!((r[2] - r[1]).abs() < 1e-10);
            }
            if (r[0] - 2.0).abs() < 1e-12 {
                assert!((r[3] - r[1]).abs() < 1e-12);
            }
        }
        assert!(bound_curves_impl(1.0, 2.0, 1.0, 10).is_err());
    }

    #[test]
    fn kernel_profiles_start_at_variance_and_decay() {
        for fam in ["se", "matern"] {
            let rows = kernel_profile_impl(fam, 2.0, 1.0, 2.5, 5.0, 51).unwrap();
            assert!((rows[1] - 2.0).abs() < 1e-12);
            let vals: Vec<f64> = rows.chunks(2).map(|r| r[1]).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
        assert!(kernel_profile_impl("rbf", 1.0, 1.0, 1.0, 1.0, 10).is_err());
        assert!(kernel_profile_impl("se", -1.0, 1.0, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn classifier_learns_xor() {
        let mut demo = ClassifierDemo::generate("xor", 1, 40, 0.5).unwrap();
        assert!(demo.probability_grid_impl(4, 4, -3.0, 3.0, -3.0, 3.0).is_err());
        let summary = demo.fit_impl("vi_jj", 8, 40, 1.0).unwrap();
        assert!(summary[0] >= 0.9, "{summary:?}");
        let grid = demo.probability_grid_impl(3, 3, -1.5, 1.5, -1.5, 1.5).unwrap();
        assert_eq!(grid.len(), 9);
        // corners (-1.5,-1.5) and (1.5,1.5) are positive, the other diagonal negative
        assert!(grid[0] > 0.5 && grid[8] > 0.5 && grid[2] < 0.5 && grid[6] < 0.5, "{grid:?}");
        assert_eq!(demo.points().len(), 3 * 80);
        assert_eq!(demo.inducing().len(), 16);
    }

    #[test]
    fn svi_runs_in_the_demo() {
        let mut demo = ClassifierDemo::generate("blobs", 2, 30, 0.6).unwrap();
        let summary = demo.fit_impl("svi_adadelta", 5, 60, 1.5).unwrap();
        assert!(summary[0] >= 0.9, "{summary:?}");
        assert!(demo.fit_impl("newton", 5, 1, 1.0).is_err());
    }
}
