//! Inducing inputs as k-means cluster centres (k-means++ seeding, Lloyd iterations).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    pub z: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::InvalidArgument("inducing set must not be empty".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("inducing inputs must be finite".into()));
        }
        Ok(Self { z })
    }

    pub fn m(&self) -> usize {
        self.z.nrows()
    }
}

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss: Vec<f64>,
}

fn sq_dist_row(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[(k, j)]).powi(2)).sum()
}

fn plus_plus_init(x: &DMatrix<f64>, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut centers = DMatrix::zeros(m, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist_row(x, i, &centers, 0)).collect();
    for k in 1..m {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(k).copy_from(&x.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist_row(x, i, &centers, k));
        }
    }
    centers
}

fn assign(x: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize]) {
    for (i, label) in labels.iter_mut().enumerate() {
        *label = (0..centers.nrows())
            .map(|k| (k, sq_dist_row(x, i, centers, k)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0;
    }
}

/// Cluster centres of `x` with `m` clusters; bit-identical for equal inputs and seed.
pub fn kmeans_inducing(x: &DMatrix<f64>, m: usize, seed: u64, max_iter: usize) -> Result<InducingSet> {
    kmeans_with_report(x, m, seed, max_iter).map(|(z, _)| z)
}

pub fn kmeans_with_report(x: &DMatrix<f64>, m: usize, seed: u64, max_iter: usize) -> Result<(InducingSet, KMeansReport)> {
    let (n, d) = x.shape();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("inputs must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(x, m, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut prev = labels.clone();
    let mut wcss = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        assign(x, &centers, &mut labels);
        if labels == prev {
            break;
        }
        prev.clone_from(&labels);
        let mut sums = DMatrix::<f64>::zeros(m, d);
        let mut counts = vec![0usize; m];
        for (i, &k) in labels.iter().enumerate() {
            counts[k] += 1;
            for j in 0..d {
                sums[(k, j)] += x[(i, j)];
            }
        }
        for k in 0..m {
            if counts[k] > 0 {
                for j in 0..d {
                    centers[(k, j)] = sums[(k, j)] / counts[k] as f64;
                }
            }
        }
        for k in 0..m {
            if counts[k] == 0 {
                // move the empty centre onto the point farthest from its own centre
                let far = (0..n)
                    .map(|i| (i, sq_dist_row(x, i, &centers, labels[i])))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centers.row_mut(k).copy_from(&x.row(far));
                labels[far] = k;
            }
        }
        let w: f64 = (0..n).map(|i| sq_dist_row(x, i, &centers, labels[i])).sum();
        if let Some(&last) = wcss.last() {
            debug_assert!(w <= last + 1e-12 * last, "k-means objective increased: {last} -> {w}");
        }
        wcss.push(w);
    }
    Ok((InducingSet::new(centers)?, KMeansReport { iterations, wcss }))
}
