//! Joint filtering and prediction for the stacked guided models.
//!
//! Object and guide are estimated together: measurements of either carry
//! information about both through the coupling in the stacked transition.

use rand::Rng;

use crate::error::{Error, Result};
use crate::guided::JointStateSpace;
use crate::linalg::{
    block_diag, check_spd, congruence, covariance_factor, spd_solve, spd_solve_vec, symmetrized,
    Mat, Vector,
};
use crate::markov::{LinearGaussian, Trajectory};
use crate::montecarlo::{draw_noise, seeded_rng, Noise};

/// `z^x_k = H^x x_k + v^x_k`, `z^d_k = H^d d_k + v^d_k`, with independent
/// white noises of covariance `R^x`, `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    object_h: Mat,
    guide_h: Mat,
    object_r: Mat,
    guide_r: Mat,
}

impl MeasurementModel {
    pub fn new(object_h: Mat, guide_h: Mat, object_r: Mat, guide_r: Mat) -> Result<Self> {
        if object_h.nrows() != object_r.nrows() || guide_h.nrows() != guide_r.nrows() {
            return Err(Error::Config("measurement matrix rows must match R".into()));
        }
        if object_h.ncols() != guide_h.ncols() {
            return Err(Error::Config(
                "object and guide states must have equal dimension".into(),
            ));
        }
        check_spd(&object_r, "object measurement covariance R^x")?;
        check_spd(&guide_r, "guide measurement covariance R^d")?;
        Ok(Self {
            object_h,
            guide_h,
            object_r,
            guide_r,
        })
    }

    /// Position-only measurements with diagonal noise `r` for both targets.
    /// `planar` selects `[x, y]` from `[x, ẋ, y, ẏ]`; otherwise `x` from `[x, ẋ]`.
    pub fn position_only(planar: bool, object_r: &[f64], guide_r: &[f64]) -> Result<Self> {
        let h = position_selector(planar);
        let rx = Mat::from_diagonal(&Vector::from_column_slice(object_r));
        let rd = Mat::from_diagonal(&Vector::from_column_slice(guide_r));
        Self::new(h.clone(), h, rx, rd)
    }

    pub fn object_h(&self) -> &Mat {
        &self.object_h
    }

    pub fn guide_h(&self) -> &Mat {
        &self.guide_h
    }

    pub fn object_r(&self) -> &Mat {
        &self.object_r
    }

    pub fn guide_r(&self) -> &Mat {
        &self.guide_r
    }

    pub fn state_dim(&self) -> usize {
        self.object_h.ncols()
    }

    /// Assembled `H_k` and `R_k` over the stacked state for whichever of the
    /// two measurements are present.
    pub fn stacked(&self, joint: &JointStateSpace, object: bool, guide: bool) -> (Mat, Mat) {
        let s = joint.stacked_dim();
        let d = joint.block_dim();
        let rows =
            usize::from(object) * self.object_h.nrows() + usize::from(guide) * self.guide_h.nrows();
        let mut h = Mat::zeros(rows, s);
        let mut r_blocks = Vec::new();
        let mut row = 0;
        if object {
            h.view_mut((row, 0), (self.object_h.nrows(), d))
                .copy_from(&self.object_h);
            row += self.object_h.nrows();
            r_blocks.push(&self.object_r);
        }
        if guide {
            h.view_mut((row, d), (self.guide_h.nrows(), d))
                .copy_from(&self.guide_h);
            r_blocks.push(&self.guide_r);
        }
        (h, block_diag(&r_blocks))
    }
}

/// `[1 0 0 0; 0 0 1 0]` for planar NCV, `[1 0]` for a single axis.
pub fn position_selector(planar: bool) -> Mat {
    if planar {
        Mat::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    } else {
        Mat::from_row_slice(1, 2, &[1.0, 0.0])
    }
}

/// Measurements at one step; either part may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub object: Option<Vector>,
    pub guide: Option<Vector>,
}

impl Measurement {
    pub fn both(object: Vector, guide: Vector) -> Self {
        Self {
            object: Some(object),
            guide: Some(guide),
        }
    }

    /// Stacked `[z^x; z^d]` over the present parts.
    pub fn stacked(&self) -> Vector {
        let parts: Vec<f64> = self
            .object
            .iter()
            .chain(self.guide.iter())
            .flat_map(|v| v.iter().copied())
            .collect();
        Vector::from_vec(parts)
    }
}

/// Noisy measurements of object and guide for `k ∈ [1, N]`.
pub fn simulate_measurements_with<R: Rng + ?Sized>(
    object: &Trajectory,
    guide: &Trajectory,
    m: &MeasurementModel,
    rng: &mut R,
    noise: Noise,
) -> Result<Vec<Measurement>> {
    if object.horizon() != guide.horizon() {
        return Err(Error::Config(
            "object and guide trajectories differ in length".into(),
        ));
    }
    if object.dim() != m.state_dim() || guide.dim() != m.state_dim() {
        return Err(Error::Config(
            "measurement matrices do not match state dimension".into(),
        ));
    }
    let fx = covariance_factor(&m.object_r)?;
    let fd = covariance_factor(&m.guide_r)?;
    Ok((1..=object.horizon())
        .map(|k| {
            let zx = &m.object_h * object.state(k) + draw_noise(rng, &fx, noise);
            let zd = &m.guide_h * guide.state(k) + draw_noise(rng, &fd, noise);
            Measurement::both(zx, zd)
        })
        .collect())
}

/// [`simulate_measurements_with`] from a fresh seeded stream.
pub fn simulate_measurements(
    object: &Trajectory,
    guide: &Trajectory,
    m: &MeasurementModel,
    seed: u64,
    noise: Noise,
) -> Result<Vec<Measurement>> {
    simulate_measurements_with(object, guide, m, &mut seeded_rng(seed), noise)
}

/// Gaussian belief over the stacked state at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub k: usize,
    pub mean: Vector,
    pub cov: Mat,
}

impl GaussianBelief {
    /// The model prior on `s_0`.
    pub fn prior(joint: &JointStateSpace) -> Self {
        Self {
            k: 0,
            mean: joint.init_mean().clone(),
            cov: joint.init_cov().clone(),
        }
    }
}

/// One-step prediction `(ŝ_{k|k-1}, Σ_{k|k-1})`.
pub fn predict_step(belief: &GaussianBelief, joint: &JointStateSpace) -> Result<GaussianBelief> {
    let k = belief.k + 1;
    if k > joint.horizon() {
        return Err(Error::Index {
            index: k,
            lo: 1,
            hi: joint.horizon(),
        });
    }
    let t = joint.transition(k);
    Ok(GaussianBelief {
        k,
        mean: t * &belief.mean,
        cov: symmetrized(&(congruence(t, &belief.cov) + joint.noise_cov(k))),
    })
}

/// Measurement update of a predicted belief.
pub fn update(
    predicted: &GaussianBelief,
    z: &Measurement,
    joint: &JointStateSpace,
    m: &MeasurementModel,
) -> Result<GaussianBelief> {
    let (has_x, has_d) = (z.object.is_some(), z.guide.is_some());
    if !has_x && !has_d {
        return Ok(predicted.clone());
    }
    let (h, r) = m.stacked(joint, has_x, has_d);
    let zk = z.stacked();
    if zk.len() != h.nrows() {
        return Err(Error::Config(
            "measurement vector has the wrong length".into(),
        ));
    }
    let p = &predicted.cov;
    let hp = &h * p;
    let cz = symmetrized(&(&hp * h.transpose() + r));
    // (C_z⁻¹ H Σ)' = C_{s,z} C_z⁻¹
    let gain_t = spd_solve(&cz, &hp).map_err(|_| {
        Error::numeric("innovation covariance C_z is singular").at_step(predicted.k)
    })?;
    let innovation = zk - &h * &predicted.mean;
    Ok(GaussianBelief {
        k: predicted.k,
        mean: &predicted.mean + gain_t.transpose() * innovation,
        cov: symmetrized(&(p - hp.transpose() * gain_t)),
    })
}

/// One predict/update cycle from `k - 1` to `k`.
pub fn kf_step(
    prior: &GaussianBelief,
    z: &Measurement,
    joint: &JointStateSpace,
    m: &MeasurementModel,
) -> Result<GaussianBelief> {
    update(&predict_step(prior, joint)?, z, joint, m)
}

/// Filter over `measurements[k-1]` for `k = init.k + 1, ...`; returns one
/// belief per measurement.
pub fn run_filter(
    joint: &JointStateSpace,
    m: &MeasurementModel,
    measurements: &[Measurement],
    init: &GaussianBelief,
) -> Result<Vec<GaussianBelief>> {
    let mut out = Vec::with_capacity(measurements.len());
    let mut belief = init.clone();
    for z in measurements {
        belief = kf_step(&belief, z, joint, m)?;
        out.push(belief.clone());
    }
    Ok(out)
}

/// `n`-step prediction `ŝ_{k+n|k} = G^s_{k+n|k} ŝ_k`,
/// `Σ_{k+n|k} = C_{k+n|k} + G^s_{k+n|k} Σ_k G^s_{k+n|k}'`, with
/// `C_{k+n|k} = Σ_{i=k}^{k+n-1} G^s_{k+n|i+1} G^s_{i+1} G^s_{k+n|i+1}'`.
///
/// Only targets in `[k+1, N-1]` are admitted; `n = 0` returns the belief.
pub fn predict_n(
    belief: &GaussianBelief,
    n: usize,
    joint: &JointStateSpace,
) -> Result<GaussianBelief> {
    if n == 0 {
        return Ok(belief.clone());
    }
    let k = belief.k;
    let last = joint.horizon() - 1;
    if k + n > last {
        return Err(Error::Index {
            index: k + n,
            lo: k + 1,
            hi: last,
        });
    }
    let s = joint.stacked_dim();
    let mut product = Mat::identity(s, s);
    let mut accumulated = Mat::zeros(s, s);
    for i in (k..k + n).rev() {
        accumulated += congruence(&product, joint.noise_cov(i + 1));
        product *= joint.transition(i + 1);
    }
    Ok(GaussianBelief {
        k: k + n,
        mean: &product * &belief.mean,
        cov: symmetrized(&(accumulated + congruence(&product, &belief.cov))),
    })
}

fn extract(
    belief: &GaussianBelief,
    range: std::ops::Range<usize>,
    joint: &JointStateSpace,
) -> Result<(Vector, Mat)> {
    if belief.mean.len() != joint.stacked_dim()
        || belief.cov.shape() != (joint.stacked_dim(), joint.stacked_dim())
    {
        return Err(Error::Config(
            "belief dimension does not match the stacked model".into(),
        ));
    }
    let len = range.len();
    Ok((
        belief.mean.rows(range.start, len).into_owned(),
        belief
            .cov
            .view((range.start, range.start), (len, len))
            .into_owned(),
    ))
}

/// `x̂ = [I 0] ŝ`, `P^x = [I 0] Σ [I 0]'`.
pub fn extract_object(belief: &GaussianBelief, joint: &JointStateSpace) -> Result<(Vector, Mat)> {
    extract(belief, joint.object_range(), joint)
}

/// `d̂ = [0 I] ŝ`, `P^d = [0 I] Σ [0 I]'`.
pub fn extract_guide(belief: &GaussianBelief, joint: &JointStateSpace) -> Result<(Vector, Mat)> {
    extract(belief, joint.guide_range(), joint)
}

/// The `d_N` block; only defined for the destination-guided layout.
pub fn extract_destination(
    belief: &GaussianBelief,
    joint: &JointStateSpace,
) -> Result<(Vector, Mat)> {
    let range = joint
        .destination_range()
        .ok_or_else(|| Error::Config("model has no destination block".into()))?;
    extract(belief, range, joint)
}

/// Normalized estimation error squared `(s - ŝ)' Σ⁻¹ (s - ŝ)`.
pub fn nees(truth: &Vector, belief: &GaussianBelief) -> Result<f64> {
    if truth.len() != belief.mean.len() {
        return Err(Error::Config("truth and belief dimensions differ".into()));
    }
    let err = truth - &belief.mean;
    let solved = spd_solve_vec(&belief.cov, &err)
        .map_err(|_| Error::numeric("belief covariance is singular").at_step(belief.k))?;
    Ok(err.dot(&solved).max(0.0))
}
