//! Discrete-time linear-Gaussian Markov models
//! `x_k = M_{k,k-1} x_{k-1} + w_k`, `x_0 = μ_0 + w_0`, over the horizon `[0, N]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_spd, congruence, covariance_factor, symmetrized, Mat, Vector};
use crate::montecarlo::{draw_noise, seeded_rng, Noise};

/// Any time-varying linear-Gaussian recursion over `[0, N]`.
///
/// Step `k` (for `k` in `1..=N`) maps `s_{k-1}` to `s_k`. Implemented by
/// [`MarkovModel`] and by the stacked guided models.
pub trait LinearGaussian {
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Transition for step `k`, `1 <= k <= N`.
    fn transition(&self, k: usize) -> &Mat;
    /// Process noise covariance for step `k`, `1 <= k <= N`.
    fn noise_cov(&self, k: usize) -> &Mat;
    fn init_mean(&self) -> &Vector;
    fn init_cov(&self) -> &Mat;
}

/// A sample path `x_0, ..., x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(states: Vec<Vector>) -> Result<Self> {
        if states.len() < 3 {
            return Err(Error::Config(format!(
                "trajectory needs at least 3 states (N >= 2), got {}",
                states.len()
            )));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::Config(
                "trajectory states differ in dimension".into(),
            ));
        }
        Ok(Self { states })
    }

    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, k: usize) -> &Vector {
        &self.states[k]
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn into_states(self) -> Vec<Vector> {
        self.states
    }

    /// Rows `range` of every state, e.g. the object block of a stacked path.
    pub fn block(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|s| s.rows(start, len).into_owned())
                .collect(),
        }
    }
}

/// Time-varying linear-Gaussian Markov model, stored step by step even when
/// time-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    dim: usize,
    transitions: Vec<Mat>,
    noise_covs: Vec<Mat>,
    init_mean: Vector,
    init_cov: Mat,
}

impl MarkovModel {
    /// `transitions[k-1]` and `noise_covs[k-1]` hold `M_{k,k-1}` and `M_k`.
    pub fn new(
        transitions: Vec<Mat>,
        noise_covs: Vec<Mat>,
        init_mean: Vector,
        init_cov: Mat,
    ) -> Result<Self> {
        let n = transitions.len();
        if n < 2 {
            return Err(Error::Config(format!("horizon N must be >= 2, got {n}")));
        }
        if noise_covs.len() != n {
            return Err(Error::Config(format!(
                "{n} transitions but {} noise covariances",
                noise_covs.len()
            )));
        }
        let dim = init_mean.len();
        if dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if init_cov.shape() != (dim, dim) {
            return Err(Error::Config(
                "initial covariance does not match state dimension".into(),
            ));
        }
        check_spd(&init_cov, "initial covariance")?;
        for (i, (f, q)) in transitions.iter().zip(&noise_covs).enumerate() {
            let k = i + 1;
            if f.shape() != (dim, dim) || q.shape() != (dim, dim) {
                return Err(Error::Config(format!(
                    "step {k}: matrices must be {dim}x{dim}"
                )));
            }
            check_spd(q, &format!("noise covariance M_{k}")).map_err(|e| e.at_step(k))?;
        }
        Ok(Self {
            dim,
            transitions,
            noise_covs,
            init_mean,
            init_cov,
        })
    }

    pub fn time_invariant(
        f: &Mat,
        q: &Mat,
        horizon: usize,
        init_mean: Vector,
        init_cov: Mat,
    ) -> Result<Self> {
        Self::new(
            vec![f.clone(); horizon],
            vec![q.clone(); horizon],
            init_mean,
            init_cov,
        )
    }

    /// Same dynamics with a different initial density.
    pub fn with_initial(&self, init_mean: Vector, init_cov: Mat) -> Result<Self> {
        Self::new(
            self.transitions.clone(),
            self.noise_covs.clone(),
            init_mean,
            init_cov,
        )
    }

    pub fn transitions(&self) -> &[Mat] {
        &self.transitions
    }

    pub fn noise_covs(&self) -> &[Mat] {
        &self.noise_covs
    }

    /// `M_{N|k} = M_{N,N-1} ··· M_{k+1,k}`, with `M_{N|N} = I`.
    pub fn transition_product(&self, k: usize) -> Result<Mat> {
        let n = self.horizon();
        if !(1..=n).contains(&k) {
            return Err(Error::Index {
                index: k,
                lo: 1,
                hi: n,
            });
        }
        Ok(self.backward_aggregates().products.swap_remove(k))
    }

    /// `C_{N|k} = Σ_{n=k}^{N-1} M_{N|n+1} M_{n+1} M_{N|n+1}'`, the covariance
    /// that the noise entering after time `k` contributes to `x_N`.
    pub fn accumulate_controllability(&self, k: usize) -> Result<Mat> {
        let n = self.horizon();
        if !(1..n).contains(&k) {
            return Err(Error::Index {
                index: k,
                lo: 1,
                hi: n - 1,
            });
        }
        Ok(self.backward_aggregates().controllability.swap_remove(k))
    }

    /// `M_{N|k}` and `C_{N|k}` for every `k` in `0..=N` by backward recursion
    /// (`C_{N|N}` is the empty sum, zero).
    pub fn backward_aggregates(&self) -> BackwardAggregates {
        let n = self.horizon();
        let d = self.dim;
        let mut products = vec![Mat::identity(d, d); n + 1];
        let mut controllability = vec![Mat::zeros(d, d); n + 1];
        for k in (0..n).rev() {
            let next = &products[k + 1];
            let step = k + 1;
            let contrib = congruence(next, &self.noise_covs[step - 1]);
            controllability[k] = symmetrized(&(&controllability[k + 1] + contrib));
            products[k] = next * &self.transitions[step - 1];
        }
        BackwardAggregates {
            products,
            controllability,
        }
    }

    /// Mean of `x_k` for every `k`.
    pub fn mean_path(&self) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.horizon() + 1);
        out.push(self.init_mean.clone());
        for f in &self.transitions {
            let next = f * out.last().expect("non-empty");
            out.push(next);
        }
        out
    }

    /// Marginal covariance of `x_k` for every `k`.
    pub fn marginal_covs(&self) -> Vec<Mat> {
        let mut out = Vec::with_capacity(self.horizon() + 1);
        out.push(self.init_cov.clone());
        for (f, q) in self.transitions.iter().zip(&self.noise_covs) {
            let next = symmetrized(&(congruence(f, out.last().expect("non-empty")) + q));
            out.push(next);
        }
        out
    }
}

impl LinearGaussian for MarkovModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> usize {
        self.transitions.len()
    }
    fn transition(&self, k: usize) -> &Mat {
        &self.transitions[k - 1]
    }
    fn noise_cov(&self, k: usize) -> &Mat {
        &self.noise_covs[k - 1]
    }
    fn init_mean(&self) -> &Vector {
        &self.init_mean
    }
    fn init_cov(&self) -> &Mat {
        &self.init_cov
    }
}

/// Output of [`MarkovModel::backward_aggregates`], indexed by `k` in `0..=N`.
#[derive(Debug, Clone)]
pub struct BackwardAggregates {
    pub products: Vec<Mat>,
    pub controllability: Vec<Mat>,
}

/// Nearly-constant-velocity configuration: sampling period, white
/// acceleration spectral density, planar flag and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcvConfig {
    pub period: f64,
    pub psd: f64,
    pub planar: bool,
    pub horizon: usize,
}

impl NcvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config(format!(
                "sampling period T must be > 0, got {}",
                self.period
            )));
        }
        if !(self.psd > 0.0 && self.psd.is_finite()) {
            return Err(Error::Config(format!(
                "spectral density q must be > 0, got {}",
                self.psd
            )));
        }
        if self.horizon < 2 {
            return Err(Error::Config(format!(
                "horizon N must be >= 2, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        if self.planar {
            4
        } else {
            2
        }
    }

    /// Per-axis blocks `F_1 = [[1, T], [0, 1]]` and
    /// `Q_1 = q [[T³/3, T²/2], [T²/2, T]]`.
    pub fn axis_blocks(&self) -> (Mat, Mat) {
        let t = self.period;
        let f1 = Mat::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
        let q1 = Mat::from_row_slice(
            2,
            2,
            &[t.powi(3) / 3.0, t.powi(2) / 2.0, t.powi(2) / 2.0, t],
        ) * self.psd;
        (f1, q1)
    }

    /// `(F, Q)` for the full state: the axis blocks, or `diag(F_1, F_1)` and
    /// `diag(Q_1, Q_1)` for the planar layout `[x, ẋ, y, ẏ]`.
    pub fn matrices(&self) -> (Mat, Mat) {
        let (f1, q1) = self.axis_blocks();
        if self.planar {
            (
                crate::linalg::block_diag(&[&f1, &f1]),
                crate::linalg::block_diag(&[&q1, &q1]),
            )
        } else {
            (f1, q1)
        }
    }
}

/// Time-invariant NCV model. The initial state is `w_0 ~ N(0, Q)`; use
/// [`MarkovModel::with_initial`] to replace it.
pub fn make_ncv_model(cfg: &NcvConfig) -> Result<MarkovModel> {
    cfg.validate()?;
    let (f, q) = cfg.matrices();
    let d = f.nrows();
    MarkovModel::time_invariant(&f, &q, cfg.horizon, Vector::zeros(d), q.clone())
}

/// Precomputed noise factors for repeated sampling of a [`LinearGaussian`]
/// recursion.
#[derive(Debug, Clone)]
pub struct LinearSampler<'a, M: LinearGaussian> {
    model: &'a M,
    init_factor: Mat,
    step_factors: Vec<Mat>,
}

impl<'a, M: LinearGaussian> LinearSampler<'a, M> {
    pub fn new(model: &'a M) -> Result<Self> {
        let init_factor = covariance_factor(model.init_cov()).map_err(|e| e.at_step(0))?;
        let step_factors = (1..=model.horizon())
            .map(|k| covariance_factor(model.noise_cov(k)).map_err(|e| e.at_step(k)))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            init_factor,
            step_factors,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, noise: Noise) -> Trajectory {
        let n = self.model.horizon();
        let mut states = Vec::with_capacity(n + 1);
        states.push(self.model.init_mean() + draw_noise(rng, &self.init_factor, noise));
        for k in 1..=n {
            let prev = &states[k - 1];
            let next =
                self.model.transition(k) * prev + draw_noise(rng, &self.step_factors[k - 1], noise);
            states.push(next);
        }
        Trajectory { states }
    }
}

/// One sample path of the Markov model, deterministic in `seed`.
pub fn sample_markov(model: &MarkovModel, seed: u64, noise: Noise) -> Result<Trajectory> {
    let sampler = LinearSampler::new(model)?;
    Ok(sampler.sample(&mut seeded_rng(seed), noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_walk(f: f64, q: f64, n: usize) -> MarkovModel {
        MarkovModel::time_invariant(&scalar(f), &scalar(q), n, Vector::zeros(1), scalar(1.0))
            .unwrap()
    }

    #[test]
    fn ncv_reference_values() {
        let cfg = NcvConfig {
            period: 1.0,
            psd: 0.005,
            planar: true,
            horizon: 250,
        };
        let model = make_ncv_model(&cfg).unwrap();
        assert_eq!(model.dim(), 4);
        assert_eq!(model.horizon(), 250);
        let f1 = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let q1 = Mat::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]) * 0.005;
        let f = model.transition(1);
        let q = model.noise_cov(250);
        assert_eq!(f.view((0, 0), (2, 2)), f1);
        assert_eq!(f.view((2, 2), (2, 2)), f1);
        assert_eq!(f.view((0, 2), (2, 2)), Mat::zeros(2, 2));
        assert_relative_eq!(q.view((0, 0), (2, 2)).into_owned(), q1, epsilon = 1e-18);
        assert_relative_eq!(q.view((2, 2), (2, 2)).into_owned(), q1, epsilon = 1e-18);
    }

    #[test]
    fn ncv_scalar_pair_q3() {
        let cfg = NcvConfig {
            period: 1.0,
            psd: 3.0,
            planar: false,
            horizon: 2,
        };
        let (_, q) = cfg.matrices();
        assert_relative_eq!(
            q,
            Mat::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 3.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ncv_period_two() {
        let cfg = NcvConfig {
            period: 2.0,
            psd: 0.005,
            planar: true,
            horizon: 10,
        };
        let (_, q) = cfg.matrices();
        assert_relative_eq!(q[(0, 0)], 0.005 * 8.0 / 3.0, epsilon = 1e-16);
    }

    #[test]
    fn ncv_rejects_bad_config() {
        let base = NcvConfig {
            period: 1.0,
            psd: 0.005,
            planar: true,
            horizon: 250,
        };
        for bad in [
            NcvConfig {
                period: 0.0,
                ..base
            },
            NcvConfig { psd: -1.0, ..base },
            NcvConfig { horizon: 1, ..base },
        ] {
            assert!(matches!(make_ncv_model(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn transition_product_cases() {
        let m = scalar_walk(2.0, 1.0, 4);
        assert_eq!(m.transition_product(4).unwrap(), scalar(1.0));
        assert_eq!(m.transition_product(1).unwrap(), scalar(8.0));
        assert!(matches!(m.transition_product(0), Err(Error::Index { .. })));
        assert!(matches!(m.transition_product(5), Err(Error::Index { .. })));

        let cfg = NcvConfig {
            period: 0.5,
            psd: 1.0,
            planar: false,
            horizon: 6,
        };
        let ncv = make_ncv_model(&cfg).unwrap();
        let (f, _) = cfg.matrices();
        assert_relative_eq!(
            ncv.transition_product(2).unwrap(),
            f.pow(4),
            epsilon = 1e-14
        );
    }

    #[test]
    fn controllability_cases() {
        let m = scalar_walk(1.0, 1.0, 3);
        assert_relative_eq!(m.accumulate_controllability(1).unwrap(), scalar(2.0));
        assert_eq!(
            m.accumulate_controllability(2).unwrap(),
            m.noise_cov(3).clone()
        );
        assert!(matches!(
            m.accumulate_controllability(3),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            m.accumulate_controllability(0),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn controllability_matches_time_invariant_sum() {
        let cfg = NcvConfig {
            period: 1.0,
            psd: 0.3,
            planar: true,
            horizon: 9,
        };
        let m = make_ncv_model(&cfg).unwrap();
        let (f, q) = cfg.matrices();
        for k in 1..9 {
            let mut sum = Mat::zeros(4, 4);
            for i in 0..(9 - k) {
                let fi = f.pow(i as u32);
                sum += &fi * &q * fi.transpose();
            }
            let c = m.accumulate_controllability(k).unwrap();
            assert!(crate::linalg::rel_frobenius(&c, &sum) < 1e-12);
        }
    }

    #[test]
    fn zero_noise_sampling_is_zero() {
        let cfg = NcvConfig {
            period: 1.0,
            psd: 0.005,
            planar: true,
            horizon: 20,
        };
        let m = make_ncv_model(&cfg).unwrap();
        let t = sample_markov(&m, 3, Noise::Off).unwrap();
        assert_eq!(t.horizon(), 20);
        assert!(t.states().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let m = scalar_walk(0.9, 0.5, 15);
        let a = sample_markov(&m, 42, Noise::On).unwrap();
        let b = sample_markov(&m, 42, Noise::On).unwrap();
        let c = sample_markov(&m, 43, Noise::On).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_models() {
        let q = scalar(1.0);
        let f = scalar(1.0);
        assert!(MarkovModel::time_invariant(&f, &q, 1, Vector::zeros(1), scalar(1.0)).is_err());
        let neg = scalar(-1.0);
        let err =
            MarkovModel::time_invariant(&f, &neg, 3, Vector::zeros(1), scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::Numeric { step: Some(1), .. }));
        let bad_shape = MarkovModel::new(
            vec![Mat::identity(2, 2), f.clone()],
            vec![q.clone(), q.clone()],
            Vector::zeros(1),
            scalar(1.0),
        );
        assert!(matches!(bad_shape, Err(Error::Config(_))));
    }

    #[test]
    fn trajectory_block_extraction() {
        let states = (0..4)
            .map(|k| Vector::from_vec(vec![k as f64, 10.0 + k as f64]))
            .collect();
        let t = Trajectory::new(states).unwrap();
        let second = t.block(1, 1);
        assert_eq!(second.state(3)[0], 13.0);
        assert!(Trajectory::new(vec![Vector::zeros(1); 2]).is_err());
    }
}
