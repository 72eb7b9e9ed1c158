//! Seeded random streams and the Monte Carlo run driver.
//!
//! Every run `r` of a batch draws from its own ChaCha8 stream derived from
//! `(seed, r)`, so results do not depend on scheduling. With the `parallel`
//! feature the runs fan out over rayon; without it (or with
//! [`Execution::Sequential`]) they run in order on the calling thread.
//! Either way the returned vector is indexed by run.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Mat, Vector};

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Generator for a single stochastic operation.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream for run `run` of a batch seeded with `seed`.
pub fn run_rng(seed: u64, run: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Whether samplers inject noise. `Off` yields the deterministic mean path,
/// which is how the zero-noise limit is expressed without violating the
/// positive-definiteness of the stored covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Noise {
    #[default]
    On,
    Off,
}

/// Draw `factor · ξ` with `ξ ~ N(0, I)`, or zero when noise is off. Nothing
/// is drawn from `rng` when noise is off.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, factor: &Mat, noise: Noise) -> Vector {
    match noise {
        Noise::Off => Vector::zeros(factor.nrows()),
        Noise::On => {
            let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            factor * xi
        }
    }
}

/// How a Monte Carlo batch is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing. Falls back to sequential when the crate is built
    /// without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Evaluate `f(run)` for `run in 0..runs`, returning results in run order.
pub fn map_runs<T, F>(runs: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..runs).map(f).collect(),
        Execution::Parallel => par_map(runs, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(runs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..runs).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(runs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..runs).map(f).collect()
}

/// Sample mean and (uncentered) second moment accumulators.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    sum: Vector,
    outer: Mat,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: Vector::zeros(dim),
            outer: Mat::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &Vector) {
        self.count += 1;
        self.sum += x;
        self.outer += x * x.transpose();
    }

    /// Fold another accumulator of the same dimension into this one.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.count += other.count;
        self.sum += &other.sum;
        self.outer += &other.outer;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vector {
        &self.sum / self.count as f64
    }

    /// Mean of `x x'` (an MSE matrix when the pushed vectors are errors).
    pub fn second_moment(&self) -> Mat {
        &self.outer / self.count as f64
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Mat {
        let n = self.count as f64;
        let m = self.mean();
        (&self.outer - &m * m.transpose() * n) / (n - 1.0)
    }
}

impl<'a> FromIterator<&'a Vector> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = &'a Vector>>(iter: I) -> Self {
        let mut iter = iter.into_iter().peekable();
        let dim = iter.peek().map_or(0, |v| v.len());
        let mut acc = MomentAccumulator::new(dim);
        for v in iter {
            acc.push(v);
        }
        acc
    }
}
