//! Projected limited-memory BFGS with box constraints and a hard evaluation budget.

use std::collections::VecDeque;

use crate::error::{check_dims, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dims("bound vectors", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    /// Gradient with components pointing out of an active bound removed.
    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                if (x[i] <= self.lower[i] && g[i] > 0.0) || (x[i] >= self.upper[i] && g[i] < 0.0) {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsbConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub pgtol: f64,
    pub ftol_rel: f64,
}

impl Default for LbfgsbConfig {
    fn default() -> Self {
        Self { memory: 10, pgtol: 1e-5, ftol_rel: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsbResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective evaluations used (value and gradient count as one).
    pub n_evals: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes `f` within `bounds` using at most `maxfun` evaluations; see [`lbfgsb_minimize_with`].
pub fn lbfgsb_minimize<F>(f: F, x0: &[f64], bounds: &BoxBounds, maxfun: usize) -> Result<LbfgsbResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    lbfgsb_minimize_with(f, x0, bounds, maxfun, &LbfgsbConfig::default())
}

/// `f` returns the value and gradient; a non-finite value marks a point as infeasible.
/// The best point seen is returned, always inside the bounds.
pub fn lbfgsb_minimize_with<F>(
    mut f: F,
    x0: &[f64],
    bounds: &BoxBounds,
    maxfun: usize,
    cfg: &LbfgsbConfig,
) -> Result<LbfgsbResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    check_dims("starting point vs bounds", x0.len(), bounds.len())?;
    if maxfun == 0 {
        return Err(Error::InvalidArgument("maxfun must be at least 1".into()));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut n_evals = 1;
    if !fx.is_finite() || g.len() != n || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer(format!("objective is not finite at the starting point (f = {fx})")));
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut converged = false;
    let mut first = true;

    while n_evals < maxfun {
        let pg = bounds.projected_gradient(&x, &g);
        if inf_norm(&pg) <= cfg.pgtol {
            converged = true;
            break;
        }
        // variables held at a bound are fixed for this iteration
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut d = two_loop(&pg, &pairs);
        for i in 0..n {
            if !free[i] {
                d[i] = 0.0;
            }
            d[i] = -d[i];
        }
        if dot(&d, &g) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            pairs.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut t = if first || pairs.is_empty() { (1.0 / dot(&d, &d).sqrt()).min(1.0) } else { 1.0 };
        first = false;

        let mut accepted = None;
        let mut x_trial = vec![0.0; n];
        while n_evals < maxfun {
            for i in 0..n {
                x_trial[i] = x[i] + t * d[i];
            }
            bounds.project(&mut x_trial);
            let step: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&step) == 0.0 {
                break;
            }
            let (ft, gt) = f(&x_trial);
            n_evals += 1;
            let finite = ft.is_finite() && gt.len() == n && gt.iter().all(|v| v.is_finite());
            let slope = dot(&g, &step);
            if finite && ft <= fx + 1e-4 * slope {
                accepted = Some((ft, gt, step));
                break;
            }
            // minimizer of the quadratic through f(x), its slope and f(x + step), kept in [0.1, 0.5]
            let shrink = if finite {
                let curv = ft - fx - slope;
                if curv > 0.0 { (-slope / (2.0 * curv)).clamp(0.1, 0.5) } else { 0.5 }
            } else {
                0.1
            };
            t *= shrink;
        }
        let Some((ft, gt, s)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        let rel = (fx - ft) / fx.abs().max(ft.abs()).max(1.0);
        x.copy_from_slice(&x_trial);
        fx = ft;
        g = gt;
        if rel <= cfg.ftol_rel {
            converged = true;
            break;
        }
    }
    Ok(LbfgsbResult { x, value: fx, n_evals, converged })
}

/// H·q by the standard two-loop recursion.
fn two_loop(q: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r
}
