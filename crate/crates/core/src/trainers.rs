//! Training strategies and evaluation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::bound_jj::{compact_bound_jj, elbo_full_j, optimal_variational_jj, xi_update_jj, XiState};
use crate::bound_svi::{elbo_quadrature_chol, svi_elbo_and_grads, CholeskyParam};
use crate::bound_taylor::{
    compact_bound_taylor, elbo_taylor_approx, optimal_variational_taylor, taylor_scalar_terms, xi_update_taylor,
};
use crate::data::Dataset;
use crate::error::{check_dims, Error, Result};
use crate::inducing::InducingSet;
use crate::kernels::KernelHyperparams;
use crate::moments::{
    compute_cov_blocks, compute_cov_blocks_with_grads, compute_cross_blocks, predict_class_prob, predict_latent,
    CovBlocks, PredictiveMoments, VariationalState,
};
use crate::optim::{adadelta_run, lbfgsb_minimize, AdaDeltaConfig, BoxBounds, EpochSchedule};
use crate::quadrature::GaussHermiteRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SviAdadelta,
    ViJj,
    ViTaylor,
    ViJjFull,
    ViJjHybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::SviAdadelta, Strategy::ViJj, Strategy::ViTaylor, Strategy::ViJjFull, Strategy::ViJjHybrid];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SviAdadelta => "svi_adadelta",
            Strategy::ViJj => "vi_jj",
            Strategy::ViTaylor => "vi_taylor",
            Strategy::ViJjFull => "vi_jj_full",
            Strategy::ViJjHybrid => "vi_jj_hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// 50 up to 2000 points, about n/100 beyond.
pub fn default_batch_size(n: usize) -> usize {
    if n <= 2000 {
        50
    } else {
        ((n as f64 / 100.0).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Starting hyperparameters.
    pub kernel: KernelHyperparams,
    pub n_upd: usize,
    pub n_fun: usize,
    /// Outer iterations, or epochs for svi.
    pub max_iters: usize,
    /// `batch_size == 0` selects [`default_batch_size`].
    pub adadelta: AdaDeltaConfig,
    /// Gauss-Hermite order of the svi likelihood term.
    pub quad_order: usize,
    pub predict_quad_order: usize,
    pub eval_every: usize,
    /// Relative surrogate change that counts as converged.
    pub tol: f64,
    /// Outer iterations without a new best surrogate before stopping.
    pub patience: usize,
    pub max_seconds: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, kernel: KernelHyperparams) -> Self {
        Self {
            strategy,
            kernel,
            n_upd: 3,
            n_fun: 5,
            max_iters: 200,
            adadelta: AdaDeltaConfig::new(0.1, 0),
            quad_order: 20,
            predict_quad_order: 32,
            eval_every: 1,
            tol: 1e-6,
            patience: 20,
            max_seconds: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.n_upd == 0 || self.n_fun == 0 {
            return Err(Error::InvalidArgument("n_upd and n_fun must be at least 1".into()));
        }
        if self.quad_order == 0 || self.predict_quad_order == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument("quadrature orders and eval_every must be at least 1".into()));
        }
        if self.strategy == Strategy::SviAdadelta {
            let mut a = self.adadelta.clone();
            a.batch_size = a.batch_size.max(1);
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Training time, excluding the time spent evaluating test accuracy.
    pub wall_seconds: f64,
    pub outer_iter: usize,
    pub elbo: f64,
    pub accuracy: Option<f64>,
    pub log_theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    NoImprovement,
    MaxIterations,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub strategy: Strategy,
    pub records: Vec<TraceRecord>,
    pub stop_reason: StopReason,
}

impl TrainingTrace {
    pub fn converged(&self) -> bool {
        matches!(self.stop_reason, StopReason::Converged | StopReason::NoImprovement)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub theta: KernelHyperparams,
    pub z: InducingSet,
    pub state: VariationalState,
}

impl FittedModel {
    pub fn predict_latent(&self, x: &DMatrix<f64>) -> Result<PredictiveMoments> {
        let cross = compute_cross_blocks(x, &self.z.z, &self.theta, false)?;
        predict_latent(&cross, &self.state)
    }

    /// p(y = +1 | x) per row of `x`.
    pub fn predict_proba(&self, x: &DMatrix<f64>, quad_order: usize) -> Result<Vec<f64>> {
        predict_class_prob(&self.predict_latent(x)?, quad_order)
    }
}

/// Fraction of rows where (p > 0.5) agrees with y = +1.
pub fn evaluate_accuracy(model: &FittedModel, test: &Dataset, quad_order: usize) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    check_dims("test features vs model", test.d(), model.z.z.ncols())?;
    let p = model.predict_proba(&test.x, quad_order)?;
    let hits = p.iter().zip(test.y.iter()).filter(|(&p, &y)| (p > 0.5) == (y > 0.0)).count();
    Ok(hits as f64 / test.n() as f64)
}

/// Training clock that can be paused while the test set is evaluated.
struct Clock {
    start: Instant,
    paused: f64,
}

impl Clock {
    fn new() -> Self {
        Self { start: Instant::now(), paused: 0.0 }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64() - self.paused
    }

    fn pause<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.paused += t0.elapsed().as_secs_f64();
        out
    }
}

struct Recorder<'a> {
    config: &'a TrainConfig,
    test: Option<&'a Dataset>,
    z: &'a InducingSet,
    clock: Clock,
    records: Vec<TraceRecord>,
    prev: Option<f64>,
    best: f64,
    stale: usize,
    sink: &'a mut dyn FnMut(&TraceRecord),
}

impl<'a> Recorder<'a> {
    fn new(
        config: &'a TrainConfig,
        z: &'a InducingSet,
        test: Option<&'a Dataset>,
        sink: &'a mut dyn FnMut(&TraceRecord),
    ) -> Self {
        Self {
            config,
            test,
            z,
            clock: Clock::new(),
            records: Vec::new(),
            prev: None,
            best: f64::NEG_INFINITY,
            stale: 0,
            sink,
        }
    }

    fn model(&self, theta: &KernelHyperparams, state: &VariationalState) -> FittedModel {
        FittedModel { theta: theta.clone(), z: self.z.clone(), state: state.clone() }
    }

    /// Logs iteration `iter` and returns a stop reason once the run should end.
    fn observe(
        &mut self,
        iter: usize,
        surrogate: f64,
        theta: &KernelHyperparams,
        state: &VariationalState,
    ) -> Result<Option<StopReason>> {
        let wall = self.clock.elapsed();
        let last = iter >= self.config.max_iters;
        let mut stop = None;
        if let Some(prev) = self.prev {
            if (surrogate - prev).abs() <= self.config.tol * surrogate.abs().max(1.0) {
                stop = Some(StopReason::Converged);
            }
        }
        if surrogate > self.best {
            self.best = surrogate;
            self.stale = 0;
        } else if iter > 0 {
            self.stale += 1;
            if self.stale >= self.config.patience && stop.is_none() {
                stop = Some(StopReason::NoImprovement);
            }
        }
        self.prev = Some(surrogate);
        if stop.is_none() {
            if last {
                stop = Some(StopReason::MaxIterations);
            } else if self.config.max_seconds.is_some_and(|cap| wall >= cap) {
                stop = Some(StopReason::TimeLimit);
            }
        }
        if iter.is_multiple_of(self.config.eval_every) || stop.is_some() {
            let accuracy = match self.test {
                Some(t) => {
                    let model = self.model(theta, state);
                    let order = self.config.predict_quad_order;
                    Some(self.clock.pause(|| evaluate_accuracy(&model, t, order))?)
                }
                None => None,
            };
            let record = TraceRecord {
                wall_seconds: wall,
                outer_iter: iter,
                elbo: surrogate,
                accuracy,
                log_theta: theta.log_params(),
            };
            (self.sink)(&record);
            self.records.push(record);
        }
        Ok(stop)
    }
}

/// Maps a failed evaluation to +∞ so the line search backs off.
fn penalize<T>(r: Result<T>, dim: usize, f: impl FnOnce(T) -> (f64, Vec<f64>)) -> (f64, Vec<f64>) {
    match r {
        Ok(v) => f(v),
        Err(_) => (f64::INFINITY, vec![0.0; dim]),
    }
}

/// One stage-1 sweep: ξ ← √(m² + S²), then (μ, Σ) ← analytic optimum, `n_upd` times.
/// `observe` sees the state after each half step.
pub fn stage1_jj(
    blocks: &CovBlocks,
    state: &VariationalState,
    y: &DVector<f64>,
    n_upd: usize,
    mut observe: impl FnMut(&VariationalState, &XiState),
) -> Result<(VariationalState, XiState)> {
    let mut st = state.clone();
    let mut xi = xi_update_jj(blocks, &st)?;
    for k in 0..n_upd {
        if k > 0 {
            xi = xi_update_jj(blocks, &st)?;
        }
        observe(&st, &xi);
        st = optimal_variational_jj(blocks, &xi, y)?;
        observe(&st, &xi);
    }
    Ok((st, xi))
}

pub fn fit(
    train: &Dataset,
    z: &InducingSet,
    config: &TrainConfig,
    test: Option<&Dataset>,
) -> Result<(FittedModel, TrainingTrace)> {
    fit_observed(train, z, config, test, &mut |_| {})
}

/// Like [`fit`], but hands every trace record to `sink` as soon as it is logged,
/// so callers keep the partial trace when a run fails.
pub fn fit_observed(
    train: &Dataset,
    z: &InducingSet,
    config: &TrainConfig,
    test: Option<&Dataset>,
    sink: &mut dyn FnMut(&TraceRecord),
) -> Result<(FittedModel, TrainingTrace)> {
    config.validate()?;
    check_dims("training features vs inducing inputs", train.d(), z.z.ncols())?;
    if let Some(t) = test {
        check_dims("test features vs training features", t.d(), train.d())?;
    }
    if train.n() == 0 {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    let mut rec = Recorder::new(config, z, test, sink);
    let (model, stop) = match config.strategy {
        Strategy::ViJj | Strategy::ViJjHybrid => fit_jj(train, z, config, &mut rec)?,
        Strategy::ViJjFull => fit_jj_full(train, z, config, &mut rec)?,
        Strategy::ViTaylor => fit_taylor(train, z, config, &mut rec)?,
        Strategy::SviAdadelta => fit_svi(train, z, config, &mut rec)?,
    };
    Ok((model, TrainingTrace { strategy: config.strategy, records: rec.records, stop_reason: stop }))
}

fn theta_bounds(theta: &KernelHyperparams, n_xi: usize) -> BoxBounds {
    let (mut lo, mut hi) = theta.log_param_bounds();
    lo.extend(std::iter::repeat_n(0.0, n_xi));
    hi.extend(std::iter::repeat_n(f64::INFINITY, n_xi));
    BoxBounds { lower: lo, upper: hi }
}

fn fit_jj(train: &Dataset, z: &InducingSet, cfg: &TrainConfig, rec: &mut Recorder) -> Result<(FittedModel, StopReason)> {
    let (x, y) = (&train.x, &train.y);
    let mut theta = cfg.kernel.clone();
    let mut blocks = compute_cov_blocks(x, &z.z, &theta)?;
    let mut state = VariationalState::standard(z.m());
    let init_xi = xi_update_jj(&blocks, &state)?;
    let mut stop = rec.observe(0, elbo_full_j(&blocks, &state, &init_xi, y)?, &theta, &state)?;
    let p = theta.num_params();
    let mut iter = 0;
    while stop.is_none() {
        iter += 1;
        let (_, mut xi) = stage1_jj(&blocks, &state, y, cfg.n_upd, |_, _| {})?;
        let hybrid = cfg.strategy == Strategy::ViJjHybrid;
        let mut x0 = theta.log_params();
        if hybrid {
            x0.extend(xi.xi.iter());
        }
        let bounds = theta_bounds(&theta, if hybrid { train.n() } else { 0 });
        let base = theta.clone();
        let res = lbfgsb_minimize(
            |v: &[f64]| {
                let th = base.with_log_params(&v[..p]);
                let xi_v = if hybrid { XiState::new(DVector::from_column_slice(&v[p..])) } else { Ok(xi.clone()) };
                let ev = xi_v.and_then(|xs| {
                    let b = compute_cov_blocks_with_grads(x, &z.z, &th)?;
                    compact_bound_jj(&b, &xs, y, true)
                });
                penalize(ev, v.len(), |e| {
                    let mut g: Vec<f64> = e.grad_theta.expect("requested").iter().map(|v| -v).collect();
                    if hybrid {
                        g.extend(e.grad_xi.expect("requested").iter().map(|v| -v));
                    }
                    (-e.value, g)
                })
            },
            &x0,
            &bounds,
            cfg.n_fun,
        )?;
        theta = base.with_log_params(&res.x[..p]);
        if hybrid {
            xi = XiState::new(DVector::from_column_slice(&res.x[p..]))?;
        }
        blocks = compute_cov_blocks(x, &z.z, &theta)?;
        state = optimal_variational_jj(&blocks, &xi, y)?;
        stop = rec.observe(iter, -res.value, &theta, &state)?;
    }
    Ok((rec.model(&theta, &state), stop.expect("loop exits with a reason")))
}

fn fit_jj_full(train: &Dataset, z: &InducingSet, cfg: &TrainConfig, rec: &mut Recorder) -> Result<(FittedModel, StopReason)> {
    let (x, y) = (&train.x, &train.y);
    let mut theta = cfg.kernel.clone();
    let mut blocks = compute_cov_blocks(x, &z.z, &theta)?;
    let mut state = VariationalState::standard(z.m());
    let mut xi = xi_update_jj(&blocks, &state)?;
    let mut stop = rec.observe(0, elbo_full_j(&blocks, &state, &xi, y)?, &theta, &state)?;
    let p = theta.num_params();
    let bounds = theta_bounds(&theta, train.n());
    let mut iter = 0;
    while stop.is_none() {
        iter += 1;
        let mut x0 = theta.log_params();
        x0.extend(xi.xi.iter());
        let base = theta.clone();
        let res = lbfgsb_minimize(
            |v: &[f64]| {
                let ev = XiState::new(DVector::from_column_slice(&v[p..])).and_then(|xs| {
                    let b = compute_cov_blocks_with_grads(x, &z.z, &base.with_log_params(&v[..p]))?;
                    compact_bound_jj(&b, &xs, y, true)
                });
                penalize(ev, v.len(), |e| {
                    let mut g: Vec<f64> = e.grad_theta.expect("requested").iter().map(|v| -v).collect();
                    g.extend(e.grad_xi.expect("requested").iter().map(|v| -v));
                    (-e.value, g)
                })
            },
            &x0,
            &bounds,
            cfg.n_fun,
        )?;
        theta = base.with_log_params(&res.x[..p]);
        xi = XiState::new(DVector::from_column_slice(&res.x[p..]))?;
        blocks = compute_cov_blocks(x, &z.z, &theta)?;
        state = optimal_variational_jj(&blocks, &xi, y)?;
        stop = rec.observe(iter, -res.value, &theta, &state)?;
    }
    Ok((rec.model(&theta, &state), stop.expect("loop exits with a reason")))
}

fn fit_taylor(train: &Dataset, z: &InducingSet, cfg: &TrainConfig, rec: &mut Recorder) -> Result<(FittedModel, StopReason)> {
    let (x, y) = (&train.x, &train.y);
    let mut theta = cfg.kernel.clone();
    let mut blocks = compute_cov_blocks(x, &z.z, &theta)?;
    let mut state = VariationalState::standard(z.m());
    let mut stop = rec.observe(0, elbo_taylor_approx(&blocks, &state, &xi_update_taylor(&blocks, &state)?, y)?, &theta, &state)?;
    let p = theta.num_params();
    let bounds = theta_bounds(&theta, 0);
    let mut iter = 0;
    while stop.is_none() {
        iter += 1;
        let mut xi = xi_update_taylor(&blocks, &state)?;
        for k in 0..cfg.n_upd {
            if k > 0 {
                xi = xi_update_taylor(&blocks, &state)?;
            }
            state = optimal_variational_taylor(&blocks, &taylor_scalar_terms(&xi, y))?;
        }
        let base = theta.clone();
        let res = lbfgsb_minimize(
            |v: &[f64]| {
                let ev = compute_cov_blocks_with_grads(x, &z.z, &base.with_log_params(v))
                    .and_then(|b| compact_bound_taylor(&b, &xi, y, true));
                penalize(ev, p, |e| (-e.value, e.grad_theta.expect("requested").iter().map(|v| -v).collect()))
            },
            &theta.log_params(),
            &bounds,
            cfg.n_fun,
        )?;
        theta = base.with_log_params(&res.x);
        blocks = compute_cov_blocks(x, &z.z, &theta)?;
        state = optimal_variational_taylor(&blocks, &taylor_scalar_terms(&xi, y))?;
        stop = rec.observe(iter, elbo_taylor_approx(&blocks, &state, &xi, y)?, &theta, &state)?;
    }
    Ok((rec.model(&theta, &state), stop.expect("loop exits with a reason")))
}

/// Packed svi parameters: μ, the unconstrained Cholesky factor, then log θ.
struct SviLayout {
    m: usize,
    n_chol: usize,
}

impl SviLayout {
    fn unpack(&self, v: &[f64], base: &KernelHyperparams, bounds: &BoxBounds) -> Result<(DVector<f64>, CholeskyParam, KernelHyperparams)> {
        let mu = DVector::from_column_slice(&v[..self.m]);
        let chol = CholeskyParam::from_unconstrained(self.m, &v[self.m..self.m + self.n_chol])?;
        let mut lt = v[self.m + self.n_chol..].to_vec();
        bounds.project(&mut lt);
        Ok((mu, chol, base.with_log_params(&lt)))
    }
}

fn fit_svi(train: &Dataset, z: &InducingSet, cfg: &TrainConfig, rec: &mut Recorder) -> Result<(FittedModel, StopReason)> {
    let (x, y) = (&train.x, &train.y);
    let m = z.m();
    let base = cfg.kernel.clone();
    let rule = GaussHermiteRule::new(cfg.quad_order)?;
    let layout = SviLayout { m, n_chol: CholeskyParam::num_unconstrained(m) };
    let theta_box = theta_bounds(&base, 0);
    let mut x0 = vec![0.0; m];
    x0.extend(CholeskyParam::identity(m).to_unconstrained());
    x0.extend(base.log_params());

    let full_elbo = |v: &[f64]| -> Result<(f64, KernelHyperparams, VariationalState)> {
        let (mu, chol, th) = layout.unpack(v, &base, &theta_box)?;
        let blocks = compute_cov_blocks(x, &z.z, &th)?;
        let e = elbo_quadrature_chol(&blocks, &mu, &chol, y, &rule)?;
        Ok((e, th, VariationalState { mu, sigma: chol.sigma() }))
    };
    let (e0, _, st0) = full_elbo(&x0)?;
    let th0 = base.clone();
    let mut stop = rec.observe(0, e0, &th0, &st0)?;
    let mut last = (th0, st0);
    if stop.is_none() {
        let mut ada = cfg.adadelta.clone();
        if ada.batch_size == 0 {
            ada.batch_size = default_batch_size(train.n());
        }
        let mut schedule = EpochSchedule::new(train.n(), ada.batch_size, cfg.max_iters, cfg.seed);
        let mut failure = None;
        adadelta_run(
            |v, batch| {
                let (mu, chol, th) = layout.unpack(v, &base, &theta_box)?;
                let ev = svi_elbo_and_grads(x, &z.z, &th, &mu, &chol, y, batch, &rule)?;
                let mut g: Vec<f64> = ev.grad_mu.iter().map(|v| -v).collect();
                g.extend(chol.unconstrained_grad(&ev.grad_l).iter().map(|v| -v));
                g.extend(ev.grad_log_theta.iter().map(|v| -v));
                Ok(g)
            },
            x0,
            &ada,
            &mut schedule,
            |epoch, v| match full_elbo(v).and_then(|(e, th, st)| {
                let s = rec.observe(epoch, e, &th, &st)?;
                last = (th, st);
                Ok(s)
            }) {
                Ok(s) => {
                    stop = s;
                    s.is_none()
                }
                Err(e) => {
                    failure = Some(e);
                    false
                }
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok((rec.model(&last.0, &last.1), stop.unwrap_or(StopReason::MaxIterations)))
}
