//! AdaDelta with the offset inside both square roots, plus a shuffled-partition minibatch schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaConfig {
    pub step_rate: f64,
    pub decay: f64,
    pub offset: f64,
    pub batch_size: usize,
}

impl AdaDeltaConfig {
    pub fn new(step_rate: f64, batch_size: usize) -> Self {
        Self { step_rate, decay: 0.9, offset: 1e-6, batch_size }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_rate > 0.0 && self.step_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("step rate must be positive, got {}", self.step_rate)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidArgument(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::InvalidArgument("offset must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Running averages E[g²] and E[Δx²].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDelta {
    pub config: AdaDeltaConfig,
    pub gms: Vec<f64>,
    pub sms: Vec<f64>,
}

impl AdaDelta {
    pub fn new(config: AdaDeltaConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, gms: vec![0.0; dim], sms: vec![0.0; dim] })
    }

    /// One descent step on `x` for the gradient `g` of the objective being minimized.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        check_dims("gradient vs parameters", g.len(), x.len())?;
        check_dims("gradient vs optimizer state", g.len(), self.gms.len())?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!("non-finite gradient component {i}: {}", g[i])));
        }
        let AdaDeltaConfig { step_rate, decay, offset, .. } = self.config;
        for i in 0..x.len() {
            self.gms[i] = decay * self.gms[i] + (1.0 - decay) * g[i] * g[i];
            let step = step_rate * (self.sms[i] + offset).sqrt() / (self.gms[i] + offset).sqrt() * g[i];
            self.sms[i] = decay * self.sms[i] + (1.0 - decay) * step * step;
            x[i] -= step;
        }
        Ok(())
    }
}

/// Each epoch is a fresh random partition of 0..n into batches of `batch_size`
/// (the last one may be smaller).
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    rng: ChaCha8Rng,
}

impl EpochSchedule {
    pub fn new(n: usize, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self { n, batch_size: batch_size.max(1), epochs, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Runs AdaDelta over `schedule`. `grad(x, batch)` returns the minibatch gradient of the
/// objective to minimize; `on_epoch(epoch, x)` fires after every epoch and stops the run
/// when it returns false.
pub fn adadelta_run<G, C>(
    mut grad: G,
    x0: Vec<f64>,
    config: &AdaDeltaConfig,
    schedule: &mut EpochSchedule,
    mut on_epoch: C,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64], &[usize]) -> Result<Vec<f64>>,
    C: FnMut(usize, &[f64]) -> bool,
{
    let mut opt = AdaDelta::new(config.clone(), x0.len())?;
    let mut x = x0;
    for epoch in 1..=schedule.epochs {
        for batch in schedule.next_epoch() {
            let g = grad(&x, &batch)?;
            opt.step(&mut x, &g)?;
        }
        if !on_epoch(epoch, &x) {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_accumulator_value() {
        let mut opt = AdaDelta::new(AdaDeltaConfig::new(1.0, 1), 1).unwrap();
        let mut x = [0.0];
        opt.step(&mut x, &[1.0]).unwrap();
        assert!((opt.gms[0] - 0.1).abs() < 1e-15);
        let expected_step = (1e-6f64).sqrt() / (0.1f64 + 1e-6).sqrt();
        assert!((x[0] + expected_step).abs() < 1e-15);
        assert!((opt.sms[0] - 0.1 * expected_step * expected_step).abs() < 1e-20);
    }

    #[test]
    fn zero_gradient_leaves_x() {
        let mut sched = EpochSchedule::new(10, 3, 5, 0);
        let x = adadelta_run(|x, _| Ok(vec![0.0; x.len()]), vec![1.0, -2.0], &AdaDeltaConfig::new(1.0, 3), &mut sched, |_, _| true)
            .unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn quadratic_matches_direct_simulation() {
        // f(x) = (x - 1)²/2 from x = 0
        let cfg = AdaDeltaConfig::new(1.0, 1);
        let mut opt = AdaDelta::new(cfg, 1).unwrap();
        let mut x = [0.0];
        for _ in 0..500 {
            let g = [x[0] - 1.0];
            opt.step(&mut x, &g).unwrap();
        }
        let (mut xs, mut gms, mut sms) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..500 {
            let g = xs - 1.0;
            gms = 0.9 * gms + 0.1 * g * g;
            let st = ((sms + 1e-6).sqrt() / (gms + 1e-6).sqrt()) * g;
            sms = 0.9 * sms + 0.1 * st * st;
            xs -= st;
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
        assert!((x[0] - xs).abs() < 1e-12);
    }

    #[test]
    fn schedule_partitions_each_epoch() {
        let mut s = EpochSchedule::new(23, 5, 2, 11);
        for _ in 0..2 {
            let e = s.next_epoch();
            assert_eq!(e.len(), 5);
            let mut all: Vec<usize> = e.concat();
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
        let a = EpochSchedule::new(23, 5, 1, 4).next_epoch();
        let b = EpochSchedule::new(23, 5, 1, 4).next_epoch();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_stream_independent_of_seed() {
        let run = |seed| {
            let mut s = EpochSchedule::new(8, 2, 4, seed);
            adadelta_run(|x, _| Ok(vec![2.0 * (x[0] - 3.0)]), vec![0.0], &AdaDeltaConfig::new(0.5, 2), &mut s, |_, _| true)
                .unwrap()
        };
        assert_eq!(run(1), run(99));
    }

    #[test]
    fn callback_can_stop_and_errors_propagate() {
        let mut s = EpochSchedule::new(4, 2, 100, 0);
        let mut seen = 0;
        adadelta_run(|_, _| Ok(vec![1.0]), vec![0.0], &AdaDeltaConfig::new(1.0, 2), &mut s, |e, _| {
            seen = e;
            e < 3
        })
        .unwrap();
        assert_eq!(seen, 3);
        let mut s = EpochSchedule::new(4, 2, 1, 0);
        let r = adadelta_run(|_, _| Ok(vec![f64::NAN]), vec![0.0], &AdaDeltaConfig::new(1.0, 2), &mut s, |_, _| true);
        assert!(matches!(r, Err(Error::Optimizer(_))));
        assert!(AdaDeltaConfig { decay: 1.0, ..AdaDeltaConfig::new(1.0, 2) }.validate().is_err());
    }
}
