//! Brute-force ground truth for small instances.
//!
//! Every model in this crate is linear in a finite set of independent
//! Gaussian noise blocks. The oracle writes each state (and measurement) out
//! explicitly as `mean + B · noise`, forms the full joint covariance
//! `B S B'` and conditions on it directly. Nothing here reuses the recursive
//! formulas it is meant to check.

use std::ops::Range;

use crate::cml::CmlParams;
use crate::error::{Error, Result};
use crate::estimation::MeasurementModel;
use crate::guided::JointStateSpace;
use crate::linalg::{symmetrized, Mat, Vector};
use crate::markov::LinearGaussian;

/// Largest total dimension the dense oracle accepts.
pub const MAX_JOINT_DIM: usize = 10_000;

/// Identifies a block of the joint vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    State(usize),
    Measurement(usize),
}

/// Joint Gaussian over many time indices, with an index map from slots to
/// coordinate ranges.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub mean: Vector,
    pub cov: Mat,
    slots: Vec<(Slot, Range<usize>)>,
}

impl JointGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn range(&self, slot: Slot) -> Option<Range<usize>> {
        self.slots
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, r)| r.clone())
    }

    /// Coordinates of the listed slots, in order.
    pub fn indices(&self, slots: &[Slot]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for &s in slots {
            let r = self
                .range(s)
                .ok_or_else(|| Error::Config(format!("slot {s:?} not in joint")))?;
            out.extend(r);
        }
        Ok(out)
    }

    /// Coordinates `offset..offset+len` within each listed slot.
    pub fn sub_indices(&self, slots: &[Slot], offset: usize, len: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for &s in slots {
            let r = self
                .range(s)
                .ok_or_else(|| Error::Config(format!("slot {s:?} not in joint")))?;
            if offset + len > r.len() {
                return Err(Error::Config("sub-block outside slot".into()));
            }
            out.extend(r.start + offset..r.start + offset + len);
        }
        Ok(out)
    }

    /// `Cov(a, b)` for coordinate lists.
    pub fn cross(&self, a: &[usize], b: &[usize]) -> Mat {
        self.cov.select_rows(a).select_columns(b)
    }

    pub fn marginal_mean(&self, a: &[usize]) -> Vector {
        self.mean.select_rows(a)
    }
}

/// States written as `mean + coeffs · noise` over independent noise blocks.
struct NoiseExpansion {
    noise_covs: Vec<Mat>,
    noise_offsets: Vec<usize>,
    total_noise: usize,
}

impl NoiseExpansion {
    fn new(noise_covs: Vec<Mat>) -> Self {
        let mut offsets = Vec::with_capacity(noise_covs.len());
        let mut total = 0;
        for c in &noise_covs {
            offsets.push(total);
            total += c.nrows();
        }
        Self {
            noise_covs,
            noise_offsets: offsets,
            total_noise: total,
        }
    }

    /// Selector of noise block `b` into a `rows`-dimensional coefficient row block.
    fn unit(&self, b: usize) -> Mat {
        let d = self.noise_covs[b].nrows();
        let mut m = Mat::zeros(d, self.total_noise);
        m.view_mut((0, self.noise_offsets[b]), (d, d))
            .copy_from(&Mat::identity(d, d));
        m
    }

    fn noise_cov(&self) -> Mat {
        let mut s = Mat::zeros(self.total_noise, self.total_noise);
        for (c, &o) in self.noise_covs.iter().zip(&self.noise_offsets) {
            s.view_mut((o, o), c.shape()).copy_from(c);
        }
        s
    }

    fn finish(&self, items: Vec<(Slot, Vector, Mat)>) -> JointGaussian {
        let rows: usize = items.iter().map(|(_, m, _)| m.len()).sum();
        let mut b = Mat::zeros(rows, self.total_noise);
        let mut mean = Vector::zeros(rows);
        let mut slots = Vec::with_capacity(items.len());
        let mut r = 0;
        for (slot, m, coeff) in items {
            let d = m.len();
            mean.rows_mut(r, d).copy_from(&m);
            b.view_mut((r, 0), (d, self.total_noise)).copy_from(&coeff);
            slots.push((slot, r..r + d));
            r += d;
        }
        let cov = symmetrized(&(&b * self.noise_cov() * b.transpose()));
        JointGaussian { mean, cov, slots }
    }
}

fn check_size(total: usize) -> Result<()> {
    if total > MAX_JOINT_DIM {
        return Err(Error::Resource(format!(
            "joint dimension {total} exceeds the oracle cap {MAX_JOINT_DIM}"
        )));
    }
    Ok(())
}

fn expand_states<M: LinearGaussian>(model: &M) -> (NoiseExpansion, Vec<(Vector, Mat)>) {
    let n = model.horizon();
    let mut covs = vec![model.init_cov().clone()];
    covs.extend((1..=n).map(|k| model.noise_cov(k).clone()));
    let exp = NoiseExpansion::new(covs);
    let mut states: Vec<(Vector, Mat)> = Vec::with_capacity(n + 1);
    states.push((model.init_mean().clone(), exp.unit(0)));
    for k in 1..=n {
        let (pm, pc) = &states[k - 1];
        let t = model.transition(k);
        states.push((t * pm, t * pc + exp.unit(k)));
    }
    (exp, states)
}

/// Exact joint of `(s_0, ..., s_N)` for any linear-Gaussian recursion.
pub fn joint_covariance<M: LinearGaussian>(model: &M) -> Result<JointGaussian> {
    check_size((model.horizon() + 1) * model.dim())?;
    let (exp, states) = expand_states(model);
    let items = states
        .into_iter()
        .enumerate()
        .map(|(k, (m, c))| (Slot::State(k), m, c))
        .collect();
    Ok(exp.finish(items))
}

/// Exact joint of `(x_0, ..., x_N)` implied by a CM_L parameter set, built
/// from the sampling equations themselves.
pub fn cml_joint(params: &CmlParams) -> Result<JointGaussian> {
    let n = params.horizon();
    let d = params.dim();
    check_size((n + 1) * d)?;
    let b = params.boundary();
    // noise blocks: e_0, e_N, e_1, ..., e_{N-1}
    let mut covs = vec![b.origin_cov.clone(), b.dest_noise.clone()];
    covs.extend(params.evo_noise_all().iter().cloned());
    let exp = NoiseExpansion::new(covs);

    let x0 = (params.origin_mean().clone(), exp.unit(0));
    let xn = (
        params.dest_mean().clone(),
        &b.dest_gain * &x0.1 + exp.unit(1),
    );
    let mut states = vec![x0];
    for k in 1..n {
        let (pm, pc) = &states[k - 1];
        let a = params.evo_prev(k);
        let g = params.evo_dest(k);
        let m = a * pm + g * &xn.0;
        let c = a * pc + g * &xn.1 + exp.unit(k + 1);
        states.push((m, c));
    }
    states.push(xn);
    let items = states
        .into_iter()
        .enumerate()
        .map(|(k, (m, c))| (Slot::State(k), m, c))
        .collect();
    Ok(exp.finish(items))
}

/// Exact joint of all stacked states and all measurements `z_1 .. z_N`
/// (both object and guide measured at every step).
pub fn joint_with_measurements(
    joint: &JointStateSpace,
    m: &MeasurementModel,
) -> Result<JointGaussian> {
    let n = joint.horizon();
    let (h, r) = m.stacked(joint, true, true);
    check_size((n + 1) * joint.stacked_dim() + n * h.nrows())?;

    let mut covs = vec![joint.init_cov().clone()];
    covs.extend((1..=n).map(|k| joint.noise_cov(k).clone()));
    covs.extend((1..=n).map(|_| r.clone()));
    let exp = NoiseExpansion::new(covs);

    let mut states: Vec<(Vector, Mat)> = Vec::with_capacity(n + 1);
    states.push((joint.init_mean().clone(), exp.unit(0)));
    for k in 1..=n {
        let (pm, pc) = &states[k - 1];
        let t = joint.transition(k);
        states.push((t * pm, t * pc + exp.unit(k)));
    }
    let mut items: Vec<(Slot, Vector, Mat)> = Vec::with_capacity(2 * n + 1);
    for (k, (sm, sc)) in states.iter().enumerate().skip(1) {
        items.push((Slot::Measurement(k), &h * sm, &h * sc + exp.unit(n + k)));
    }
    for (k, (sm, sc)) in states.into_iter().enumerate() {
        items.push((Slot::State(k), sm, sc));
    }
    Ok(exp.finish(items))
}

/// Conditional law of a target block given another block:
/// `target | given = g ~ N(offset + weights · g, cov)`.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub weights: Mat,
    pub offset: Vector,
    pub cov: Mat,
}

impl Conditional {
    pub fn mean(&self, given: &Vector) -> Vector {
        &self.offset + &self.weights * given
    }
}

/// Condition coordinates `target` on coordinates `given`.
pub fn gaussian_condition(
    jg: &JointGaussian,
    target: &[usize],
    given: &[usize],
) -> Result<Conditional> {
    if target.iter().any(|t| given.contains(t)) {
        return Err(Error::Config("target and given sets overlap".into()));
    }
    let s_tt = jg.cross(target, target);
    let mu_t = jg.marginal_mean(target);
    if given.is_empty() {
        return Ok(Conditional {
            weights: Mat::zeros(target.len(), 0),
            offset: mu_t,
            cov: s_tt,
        });
    }
    let s_gg = symmetrized(&jg.cross(given, given));
    let s_gt = jg.cross(given, target);
    let chol = s_gg
        .cholesky()
        .ok_or_else(|| Error::numeric("conditioning block is singular"))?;
    let weights = chol.solve(&s_gt).transpose();
    let cov = symmetrized(&(s_tt - &weights * &s_gt));
    let offset = mu_t - &weights * jg.marginal_mean(given);
    Ok(Conditional {
        weights,
        offset,
        cov,
    })
}
