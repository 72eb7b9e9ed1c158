//! Guided trajectories: an object chasing a moving guide.
//!
//! The object evolves as
//! `x_k = G^x_{k,k-1} x_{k-1} + G^{xd}_{k,k-1} d_{k-1} + e_k` for `k ∈ [1, N-1]`
//! and meets the guide at the end, `x_N = d_N + e_N`. The guide is either a
//! Markov sequence or itself destination-directed (a CM_L sequence with its
//! own `d_N`). Object coefficients come from the Markov-induced CM_L
//! parameters with the guide at `k-1` standing in for the destination.
//!
//! Both variants are combined into a single Markov recursion on a stacked
//! state so that filtering and prediction reduce to a linear-Gaussian model.

use std::ops::Range;

use rand::Rng;

use crate::cml::{derive_induced_params_stationary, CmlParams};
use crate::error::{Error, Result};
use crate::linalg::{block_diag, check_psd, check_spd, congruence, symmetrized, Mat, Vector};
use crate::markov::{LinearGaussian, LinearSampler, MarkovModel, Trajectory};
use crate::montecarlo::{seeded_rng, Noise};

/// Terminal miss covariance scale used when none is configured.
pub const DEFAULT_TERMINAL_EPS: f64 = 1e-4;

/// `ε I`, the default `Cov(e_N)`.
pub fn default_terminal_cov(dim: usize) -> Mat {
    Mat::identity(dim, dim) * DEFAULT_TERMINAL_EPS
}

/// Mean and covariance of `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    pub mean: Vector,
    pub cov: Mat,
}

/// Object coefficients `G^x_{k,k-1}`, `G^{xd}_{k,k-1}`, `Cov(e_k)` for
/// `k ∈ [1, N-1]`, stored at index `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEvolution {
    pub own: Vec<Mat>,
    pub guide: Vec<Mat>,
    pub noise: Vec<Mat>,
}

impl ObjectEvolution {
    /// Take the interior law of a CM_L model, with the guide in the
    /// destination slot.
    pub fn from_cml(params: &CmlParams) -> Self {
        Self {
            own: params.evo_prev_all().to_vec(),
            guide: params.evo_dest_all().to_vec(),
            noise: params.evo_noise_all().to_vec(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.own.len() + 1
    }
}

/// Object chasing a Markov guide.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSystem {
    pub object: ObjectEvolution,
    pub guide: MarkovModel,
    /// `Cov(e_N)` in `x_N = d_N + e_N`.
    pub terminal_cov: Mat,
    pub object_init: InitialDensity,
}

/// Object chasing a guide that has its own destination.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationGuidedSystem {
    pub object: ObjectEvolution,
    pub guide: CmlParams,
    pub terminal_cov: Mat,
    pub object_init: InitialDensity,
}

fn check_object_inputs(
    f: &Mat,
    q: &Mat,
    guide_dim: usize,
    guide_horizon: usize,
    terminal_cov: &Mat,
    init: &InitialDensity,
) -> Result<()> {
    let d = f.nrows();
    if !f.is_square() || q.shape() != (d, d) {
        return Err(Error::Config(
            "F and Q must be square and of equal size".into(),
        ));
    }
    if guide_dim != d {
        return Err(Error::Config(format!(
            "object dimension {d} differs from guide dimension {guide_dim}"
        )));
    }
    if guide_horizon < 2 {
        return Err(Error::Config("guide horizon must be >= 2".into()));
    }
    if terminal_cov.shape() != (d, d) || init.mean.len() != d || init.cov.shape() != (d, d) {
        return Err(Error::Config(
            "terminal or initial object covariance has the wrong dimension".into(),
        ));
    }
    check_spd(terminal_cov, "terminal covariance Cov(e_N)")?;
    check_spd(&init.cov, "object initial covariance")
}

/// Markov-guided object model: coefficients from the stationary induced
/// formulas for the object's own motion model `(F, Q)` over the guide's horizon.
pub fn build_markov_guided(
    f: &Mat,
    q: &Mat,
    guide: MarkovModel,
    terminal_cov: Mat,
    object_init: InitialDensity,
) -> Result<GuidedSystem> {
    check_object_inputs(
        f,
        q,
        guide.dim(),
        guide.horizon(),
        &terminal_cov,
        &object_init,
    )?;
    let induced = derive_induced_params_stationary(f, q, guide.horizon())?;
    Ok(GuidedSystem {
        object: ObjectEvolution::from_cml(&induced),
        guide,
        terminal_cov,
        object_init,
    })
}

/// CM_L-guided object model: same object coefficients, guide following
/// `guide_cml`.
pub fn build_cml_guided(
    f: &Mat,
    q: &Mat,
    guide_cml: CmlParams,
    terminal_cov: Mat,
    object_init: InitialDensity,
) -> Result<DestinationGuidedSystem> {
    check_object_inputs(
        f,
        q,
        guide_cml.dim(),
        guide_cml.horizon(),
        &terminal_cov,
        &object_init,
    )?;
    let induced = derive_induced_params_stationary(f, q, guide_cml.horizon())?;
    Ok(DestinationGuidedSystem {
        object: ObjectEvolution::from_cml(&induced),
        guide: guide_cml,
        terminal_cov,
        object_init,
    })
}

/// Which blocks the stacked state carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `[x_k; d_k]`
    Guided,
    /// `[x_k; d_k; d_N]`
    DestinationGuided,
}

impl Layout {
    pub fn blocks(self) -> usize {
        match self {
            Layout::Guided => 2,
            Layout::DestinationGuided => 3,
        }
    }
}

/// Stacked Markov recursion `s_k = G^s_{k,k-1} s_{k-1} + e^s_k`,
/// `Cov(e^s_k) = G^s_k`, for `k ∈ [1, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStateSpace {
    block_dim: usize,
    layout: Layout,
    transitions: Vec<Mat>,
    noise_covs: Vec<Mat>,
    init_mean: Vector,
    init_cov: Mat,
}

impl JointStateSpace {
    pub fn new(
        block_dim: usize,
        layout: Layout,
        transitions: Vec<Mat>,
        noise_covs: Vec<Mat>,
        init_mean: Vector,
        init_cov: Mat,
    ) -> Result<Self> {
        let s = block_dim * layout.blocks();
        if transitions.len() < 2 || noise_covs.len() != transitions.len() {
            return Err(Error::Config(
                "stacked model needs N >= 2 matching steps".into(),
            ));
        }
        if init_mean.len() != s || init_cov.shape() != (s, s) {
            return Err(Error::Config(
                "stacked initial density has the wrong dimension".into(),
            ));
        }
        check_psd(&init_cov, "stacked initial covariance")?;
        for (i, (t, c)) in transitions.iter().zip(&noise_covs).enumerate() {
            if t.shape() != (s, s) || c.shape() != (s, s) {
                return Err(Error::Config(format!(
                    "step {}: stacked matrices must be {s}x{s}",
                    i + 1
                )));
            }
            check_psd(c, "stacked noise covariance").map_err(|e| e.at_step(i + 1))?;
        }
        Ok(Self {
            block_dim,
            layout,
            transitions,
            noise_covs,
            init_mean,
            init_cov,
        })
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn stacked_dim(&self) -> usize {
        self.block_dim * self.layout.blocks()
    }

    pub fn object_range(&self) -> Range<usize> {
        0..self.block_dim
    }

    pub fn guide_range(&self) -> Range<usize> {
        self.block_dim..2 * self.block_dim
    }

    pub fn destination_range(&self) -> Option<Range<usize>> {
        match self.layout {
            Layout::Guided => None,
            Layout::DestinationGuided => Some(2 * self.block_dim..3 * self.block_dim),
        }
    }

    /// Same dynamics with a different initial density.
    pub fn with_initial(&self, mean: Vector, cov: Mat) -> Result<Self> {
        Self::new(
            self.block_dim,
            self.layout,
            self.transitions.clone(),
            self.noise_covs.clone(),
            mean,
            cov,
        )
    }
}

impl LinearGaussian for JointStateSpace {
    fn dim(&self) -> usize {
        self.stacked_dim()
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

fn put(m: &mut Mat, row: usize, col: usize, d: usize, block: &Mat) {
    m.view_mut((row * d, col * d), (d, d)).copy_from(block);
}

/// Stacked model over `[x_k; d_k]`.
///
/// Interior steps use `[[G^x, G^{xd}], [0, G^d]]` with block-diagonal noise.
/// Step `N` encodes `x_N = d_N + e_N` with
/// `d_N = G^d_{N,N-1} d_{N-1} + w_N` as
/// `[[0, G^d_{N,N-1}], [0, G^d_{N,N-1}]]` and noise
/// `[[Cov(e_N) + Cov(w_N), Cov(w_N)], [Cov(w_N), Cov(w_N)]]`.
pub fn assemble_joint(sys: &GuidedSystem) -> Result<JointStateSpace> {
    let d = sys.guide.dim();
    let n = sys.guide.horizon();
    if sys.object.horizon() != n {
        return Err(Error::Config("object and guide horizons differ".into()));
    }
    let mut transitions = Vec::with_capacity(n);
    let mut noise_covs = Vec::with_capacity(n);
    for k in 1..n {
        let mut t = Mat::zeros(2 * d, 2 * d);
        put(&mut t, 0, 0, d, &sys.object.own[k - 1]);
        put(&mut t, 0, 1, d, &sys.object.guide[k - 1]);
        put(&mut t, 1, 1, d, sys.guide.transition(k));
        transitions.push(t);
        noise_covs.push(block_diag(&[
            &sys.object.noise[k - 1],
            sys.guide.noise_cov(k),
        ]));
    }
    let gd = sys.guide.transition(n);
    let w = sys.guide.noise_cov(n);
    let mut t = Mat::zeros(2 * d, 2 * d);
    put(&mut t, 0, 1, d, gd);
    put(&mut t, 1, 1, d, gd);
    transitions.push(t);
    let mut c = Mat::zeros(2 * d, 2 * d);
    put(&mut c, 0, 0, d, &symmetrized(&(&sys.terminal_cov + w)));
    put(&mut c, 0, 1, d, w);
    put(&mut c, 1, 0, d, w);
    put(&mut c, 1, 1, d, w);
    noise_covs.push(c);

    let mut init_mean = Vector::zeros(2 * d);
    init_mean.rows_mut(0, d).copy_from(&sys.object_init.mean);
    init_mean.rows_mut(d, d).copy_from(sys.guide.init_mean());
    let init_cov = block_diag(&[&sys.object_init.cov, sys.guide.init_cov()]);
    JointStateSpace::new(
        d,
        Layout::Guided,
        transitions,
        noise_covs,
        init_mean,
        init_cov,
    )
}

/// Stacked model over `[x_k; d_k; d_N]`. The destination row is the identity
/// with zero noise; `d_N` enters at time 0 through the guide's boundary.
///
/// Step `N` maps `x_N = d_N + e_N` and `d_N ← d_N` through the third block.
pub fn assemble_joint_destination(sys: &DestinationGuidedSystem) -> Result<JointStateSpace> {
    let g = &sys.guide;
    let d = g.dim();
    let n = g.horizon();
    if sys.object.horizon() != n {
        return Err(Error::Config("object and guide horizons differ".into()));
    }
    let zero = Mat::zeros(d, d);
    let eye = Mat::identity(d, d);
    let mut transitions = Vec::with_capacity(n);
    let mut noise_covs = Vec::with_capacity(n);
    for k in 1..n {
        let mut t = Mat::zeros(3 * d, 3 * d);
        put(&mut t, 0, 0, d, &sys.object.own[k - 1]);
        put(&mut t, 0, 1, d, &sys.object.guide[k - 1]);
        put(&mut t, 1, 1, d, g.evo_prev(k));
        put(&mut t, 1, 2, d, g.evo_dest(k));
        put(&mut t, 2, 2, d, &eye);
        transitions.push(t);
        noise_covs.push(block_diag(&[
            &sys.object.noise[k - 1],
            g.evo_noise(k),
            &zero,
        ]));
    }
    let mut t = Mat::zeros(3 * d, 3 * d);
    for row in 0..3 {
        put(&mut t, row, 2, d, &eye);
    }
    transitions.push(t);
    noise_covs.push(block_diag(&[&sys.terminal_cov, &zero, &zero]));

    let b = g.boundary();
    let mut init_mean = Vector::zeros(3 * d);
    init_mean.rows_mut(0, d).copy_from(&sys.object_init.mean);
    init_mean.rows_mut(d, d).copy_from(g.origin_mean());
    init_mean.rows_mut(2 * d, d).copy_from(g.dest_mean());
    let mut init_cov = Mat::zeros(3 * d, 3 * d);
    put(&mut init_cov, 0, 0, d, &sys.object_init.cov);
    put(&mut init_cov, 1, 1, d, &b.origin_cov);
    let cross = &b.dest_gain * &b.origin_cov;
    put(&mut init_cov, 2, 1, d, &cross);
    put(&mut init_cov, 1, 2, d, &cross.transpose());
    put(
        &mut init_cov,
        2,
        2,
        d,
        &symmetrized(&(congruence(&b.dest_gain, &b.origin_cov) + &b.dest_noise)),
    );
    JointStateSpace::new(
        d,
        Layout::DestinationGuided,
        transitions,
        noise_covs,
        init_mean,
        init_cov,
    )
}

/// Stacked sampler with precomputed noise factors.
pub struct GuidedSampler<'a> {
    joint: &'a JointStateSpace,
    inner: LinearSampler<'a, JointStateSpace>,
}

impl<'a> GuidedSampler<'a> {
    pub fn new(joint: &'a JointStateSpace) -> Result<Self> {
        Ok(Self {
            joint,
            inner: LinearSampler::new(joint)?,
        })
    }

    /// Full stacked path `s_0 .. s_N`.
    pub fn sample_stacked<R: Rng + ?Sized>(&self, rng: &mut R, noise: Noise) -> Trajectory {
        self.inner.sample(rng, noise)
    }

    /// Object and guide paths.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, noise: Noise) -> (Trajectory, Trajectory) {
        split(self.joint, &self.sample_stacked(rng, noise))
    }
}

/// Object and guide blocks of a stacked path.
pub fn split(joint: &JointStateSpace, stacked: &Trajectory) -> (Trajectory, Trajectory) {
    let d = joint.block_dim();
    (stacked.block(0, d), stacked.block(d, d))
}

/// One coupled object/guide sample, deterministic in `seed`.
pub fn sample_guided(
    joint: &JointStateSpace,
    seed: u64,
    noise: Noise,
) -> Result<(Trajectory, Trajectory)> {
    Ok(GuidedSampler::new(joint)?.sample(&mut seeded_rng(seed), noise))
}
