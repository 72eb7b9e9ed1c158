//! Destination-directed trajectories as CM_L sequences.
//!
//! The interior evolves as `x_k = G_{k,k-1} x_{k-1} + G_{k,N} x_N + e_k`,
//! `k ∈ [1, N-1]`, `Cov(e_k) = G_k`, and the endpoints obey
//! `x_0 = μ_0 + e_0`, `x_N = μ_N + G_{N,0}(x_0 - μ_0) + e_N`.
//!
//! Parameters are induced from a Markov model so that, with the Markov
//! model's own endpoint joint, the CM_L sequence has exactly the Markov
//! sequence's distribution. Any other endpoint density can then be attached
//! without touching the evolution law.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    check_spd, congruence, covariance_factor, spd_inverse, spd_solve, symmetrized, Mat, Vector,
};
use crate::markov::{LinearGaussian, MarkovModel, Trajectory};
use crate::montecarlo::{draw_noise, seeded_rng, Noise};

/// Endpoint boundary `(G_{N,0}, G_N, G_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    /// `G_{N,0}`
    pub dest_gain: Mat,
    /// `G_N = Cov(e_N)`
    pub dest_noise: Mat,
    /// `G_0 = Cov(e_0)`
    pub origin_cov: Mat,
}

/// Joint Gaussian density of the origin `x_0` and destination `x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDensity {
    pub origin_mean: Vector,
    pub origin_cov: Mat,
    pub dest_mean: Vector,
    pub dest_cov: Mat,
    /// `C_{N,0} = Cov(x_N, x_0)`
    pub cross_cov: Mat,
}

impl EndpointDensity {
    /// The stacked covariance `[[C_0, C_{N,0}'], [C_{N,0}, C_N]]`.
    pub fn stacked_cov(&self) -> Mat {
        let d = self.origin_mean.len();
        let mut out = Mat::zeros(2 * d, 2 * d);
        out.view_mut((0, 0), (d, d)).copy_from(&self.origin_cov);
        out.view_mut((0, d), (d, d))
            .copy_from(&self.cross_cov.transpose());
        out.view_mut((d, 0), (d, d)).copy_from(&self.cross_cov);
        out.view_mut((d, d), (d, d)).copy_from(&self.dest_cov);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.origin_mean.len();
        let shapes_ok = self.dest_mean.len() == d
            && self.origin_cov.shape() == (d, d)
            && self.dest_cov.shape() == (d, d)
            && self.cross_cov.shape() == (d, d);
        if d == 0 || !shapes_ok {
            return Err(Error::Config(
                "endpoint density dimensions are inconsistent".into(),
            ));
        }
        check_spd(&self.origin_cov, "origin covariance C_0")?;
        check_spd(&self.dest_cov, "destination covariance C_N")?;
        check_spd(&self.stacked_cov(), "endpoint joint covariance")
    }
}

/// Parameters of a CM_L model over `[0, N]`.
///
/// The evolution sequences are indexed by `k - 1` for `k ∈ [1, N-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmlParams {
    dim: usize,
    horizon: usize,
    evo_prev: Vec<Mat>,
    evo_dest: Vec<Mat>,
    evo_noise: Vec<Mat>,
    boundary: Boundary,
    origin_mean: Vector,
    dest_mean: Vector,
}

impl CmlParams {
    pub fn new(
        evo_prev: Vec<Mat>,
        evo_dest: Vec<Mat>,
        evo_noise: Vec<Mat>,
        boundary: Boundary,
        origin_mean: Vector,
        dest_mean: Vector,
    ) -> Result<Self> {
        let interior = evo_prev.len();
        if interior == 0 {
            return Err(Error::Config("CM_L model needs N >= 2".into()));
        }
        if evo_dest.len() != interior || evo_noise.len() != interior {
            return Err(Error::Config(
                "evolution sequences must all have N-1 entries".into(),
            ));
        }
        let d = origin_mean.len();
        if d == 0 || dest_mean.len() != d {
            return Err(Error::Config(
                "endpoint means have inconsistent dimension".into(),
            ));
        }
        for (i, ((a, b), g)) in evo_prev.iter().zip(&evo_dest).zip(&evo_noise).enumerate() {
            let k = i + 1;
            if a.shape() != (d, d) || b.shape() != (d, d) || g.shape() != (d, d) {
                return Err(Error::Config(format!("step {k}: matrices must be {d}x{d}")));
            }
            check_spd(g, &format!("G_{k}")).map_err(|e| e.at_step(k))?;
        }
        if boundary.dest_gain.shape() != (d, d) {
            return Err(Error::Config("G_{N,0} has wrong shape".into()));
        }
        check_spd(&boundary.dest_noise, "G_N")?;
        check_spd(&boundary.origin_cov, "G_0")?;
        Ok(Self {
            dim: d,
            horizon: interior + 1,
            evo_prev,
            evo_dest,
            evo_noise,
            boundary,
            origin_mean,
            dest_mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `G_{k,k-1}` for `k ∈ [1, N-1]`.
    pub fn evo_prev(&self, k: usize) -> &Mat {
        &self.evo_prev[k - 1]
    }

    /// `G_{k,N}` for `k ∈ [1, N-1]`.
    pub fn evo_dest(&self, k: usize) -> &Mat {
        &self.evo_dest[k - 1]
    }

    /// `G_k` for `k ∈ [1, N-1]`.
    pub fn evo_noise(&self, k: usize) -> &Mat {
        &self.evo_noise[k - 1]
    }

    pub fn evo_prev_all(&self) -> &[Mat] {
        &self.evo_prev
    }

    pub fn evo_dest_all(&self) -> &[Mat] {
        &self.evo_dest
    }

    pub fn evo_noise_all(&self) -> &[Mat] {
        &self.evo_noise
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn origin_mean(&self) -> &Vector {
        &self.origin_mean
    }

    pub fn dest_mean(&self) -> &Vector {
        &self.dest_mean
    }

    /// The endpoint joint implied by the boundary parameters.
    pub fn endpoint_density(&self) -> EndpointDensity {
        let b = &self.boundary;
        let cross = &b.dest_gain * &b.origin_cov;
        let dest_cov = symmetrized(&(congruence(&b.dest_gain, &b.origin_cov) + &b.dest_noise));
        EndpointDensity {
            origin_mean: self.origin_mean.clone(),
            origin_cov: b.origin_cov.clone(),
            dest_mean: self.dest_mean.clone(),
            dest_cov,
            cross_cov: cross,
        }
    }
}

/// One interior step of the Markov-induced parameters.
struct InducedStep {
    prev: Mat,
    dest: Mat,
    noise: Mat,
}

/// `G_k = (M_k⁻¹ + A' C⁻¹ A)⁻¹`, `G_{k,N} = G_k A' C⁻¹`,
/// `G_{k,k-1} = M_{k,k-1} - G_{k,N} A M_{k,k-1}` with `A = M_{N|k}` and
/// `C = C_{N|k}`.
fn induced_step(transition: &Mat, noise: &Mat, to_dest: &Mat, ctrl: &Mat) -> Result<InducedStep> {
    let ctrl_inv_a = spd_solve(ctrl, to_dest).map_err(|_| Error::numeric("C_{N|k} is singular"))?;
    let info = symmetrized(&(to_dest.transpose() * &ctrl_inv_a));
    let noise_inv = spd_inverse(noise).map_err(|_| Error::numeric("M_k is singular"))?;
    let g = spd_inverse(&(noise_inv + info))
        .map_err(|_| Error::numeric("M_k⁻¹ + M_{N|k}' C_{N|k}⁻¹ M_{N|k} is singular"))?;
    let dest = &g * ctrl_inv_a.transpose();
    let prev = transition - &dest * to_dest * transition;
    Ok(InducedStep {
        prev,
        dest,
        noise: g,
    })
}

/// Boundary and means that reproduce `ep` as the endpoint joint:
/// `G_{N,0} = C_{N,0} C_0⁻¹`, `G_N = C_N - C_{N,0} C_0⁻¹ C_{N,0}'`, `G_0 = C_0`.
fn boundary_from_density(ep: &EndpointDensity) -> Result<Boundary> {
    let c0_inv_cross_t = spd_solve(&ep.origin_cov, &ep.cross_cov.transpose())
        .map_err(|_| Error::numeric("C_0 is singular"))?;
    let dest_gain = c0_inv_cross_t.transpose();
    let dest_noise = symmetrized(&(&ep.dest_cov - &ep.cross_cov * &c0_inv_cross_t));
    Ok(Boundary {
        dest_gain,
        dest_noise,
        origin_cov: ep.origin_cov.clone(),
    })
}

/// Endpoint joint of `(x_0, x_N)` under a Markov model.
pub fn markov_endpoint_density(markov: &MarkovModel) -> EndpointDensity {
    let agg = markov.backward_aggregates();
    let to_dest = &agg.products[0];
    let c0 = markov.init_cov();
    EndpointDensity {
        origin_mean: markov.init_mean().clone(),
        origin_cov: c0.clone(),
        dest_mean: to_dest * markov.init_mean(),
        dest_cov: symmetrized(&(congruence(to_dest, c0) + &agg.controllability[0])),
        cross_cov: to_dest * c0,
    }
}

fn assemble(steps: Vec<InducedStep>, ep: &EndpointDensity) -> Result<CmlParams> {
    let boundary = boundary_from_density(ep)?;
    let mut evo_prev = Vec::with_capacity(steps.len());
    let mut evo_dest = Vec::with_capacity(steps.len());
    let mut evo_noise = Vec::with_capacity(steps.len());
    for s in steps {
        evo_prev.push(s.prev);
        evo_dest.push(s.dest);
        evo_noise.push(s.noise);
    }
    CmlParams::new(
        evo_prev,
        evo_dest,
        evo_noise,
        boundary,
        ep.origin_mean.clone(),
        ep.dest_mean.clone(),
    )
}

/// CM_L parameters induced by a Markov model. The boundary is the Markov
/// model's own endpoint joint, so the induced sequence equals the Markov one.
pub fn derive_induced_params(markov: &MarkovModel) -> Result<CmlParams> {
    let n = markov.horizon();
    let agg = markov.backward_aggregates();
    let steps = (1..n)
        .map(|k| {
            induced_step(
                markov.transition(k),
                markov.noise_cov(k),
                &agg.products[k],
                &agg.controllability[k],
            )
            .map_err(|e| e.at_step(k))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(steps, &markov_endpoint_density(markov))
}

/// Induced parameters for the time-invariant model `M_{k,k-1} = F`, `M_k = Q`,
/// using powers of `F` and `C_{N|k} = Σ_{i=0}^{N-k-1} F^i Q (F^i)'`.
///
/// The boundary is that of the time-invariant model started from
/// `x_0 = w_0 ~ N(0, Q)`; attach a different one with [`set_endpoint_density`].
pub fn derive_induced_params_stationary(f: &Mat, q: &Mat, horizon: usize) -> Result<CmlParams> {
    if horizon < 2 {
        return Err(Error::Config(format!(
            "horizon N must be >= 2, got {horizon}"
        )));
    }
    let d = f.nrows();
    if !f.is_square() || q.shape() != (d, d) {
        return Err(Error::Config(
            "F and Q must be square and of equal size".into(),
        ));
    }
    check_spd(q, "Q")?;

    // Walk k downward from N-1; `pow` holds F^{N-k-1} entering each iteration.
    let mut steps = Vec::with_capacity(horizon - 1);
    let mut pow = Mat::identity(d, d);
    let mut ctrl = Mat::zeros(d, d);
    for k in (1..horizon).rev() {
        ctrl = symmetrized(&(ctrl + congruence(&pow, q)));
        let to_dest = &pow * f;
        steps.push(induced_step(f, q, &to_dest, &ctrl).map_err(|e| e.at_step(k))?);
        pow = to_dest;
    }
    steps.reverse();

    // pow = F^{N-1} here; the endpoint needs F^N and C_{N|0}.
    let ctrl0 = symmetrized(&(ctrl + congruence(&pow, q)));
    let to_dest0 = &pow * f;
    let ep = EndpointDensity {
        origin_mean: Vector::zeros(d),
        origin_cov: q.clone(),
        dest_mean: Vector::zeros(d),
        dest_cov: symmetrized(&(congruence(&to_dest0, q) + ctrl0)),
        cross_cov: &to_dest0 * q,
    };
    assemble(steps, &ep)
}

/// `G_k = M_k - M_k A' (C + A M_k A')⁻¹ A M_k`, the matrix-inversion-lemma
/// form of `(M_k⁻¹ + A' C⁻¹ A)⁻¹` that never inverts `M_k`.
pub fn gk_via_mil(noise: &Mat, to_dest: &Mat, ctrl: &Mat) -> Result<Mat> {
    let a_m = to_dest * noise;
    let s = symmetrized(&(ctrl + &a_m * to_dest.transpose()));
    let x = spd_solve(&s, &a_m).map_err(|_| Error::numeric("C + A M_k A' is singular"))?;
    Ok(symmetrized(&(noise - a_m.transpose() * x)))
}

/// Replace the boundary and endpoint means, keeping the evolution law.
pub fn set_endpoint_density(params: &CmlParams, ep: &EndpointDensity) -> Result<CmlParams> {
    if ep.origin_mean.len() != params.dim {
        return Err(Error::Config("endpoint density dimension mismatch".into()));
    }
    ep.validate()?;
    let boundary = boundary_from_density(ep)?;
    check_spd(&boundary.dest_noise, "G_N")?;
    Ok(CmlParams {
        boundary,
        origin_mean: ep.origin_mean.clone(),
        dest_mean: ep.dest_mean.clone(),
        ..params.clone()
    })
}

/// Precomputed factors for repeated destination-directed sampling.
#[derive(Debug, Clone)]
pub struct CmlSampler<'a> {
    params: &'a CmlParams,
    origin_factor: Mat,
    dest_factor: Mat,
    step_factors: Vec<Mat>,
}

impl<'a> CmlSampler<'a> {
    pub fn new(params: &'a CmlParams) -> Result<Self> {
        let b = &params.boundary;
        Ok(Self {
            params,
            origin_factor: covariance_factor(&b.origin_cov).map_err(|e| e.at_step(0))?,
            dest_factor: covariance_factor(&b.dest_noise).map_err(|e| e.at_step(params.horizon))?,
            step_factors: params
                .evo_noise
                .iter()
                .enumerate()
                .map(|(i, g)| covariance_factor(g).map_err(|e| e.at_step(i + 1)))
                .collect::<Result<_>>()?,
        })
    }

    /// Draw order: `e_0`, `e_N`, then `e_1 .. e_{N-1}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, noise: Noise) -> Trajectory {
        let p = self.params;
        let n = p.horizon;
        let e0 = draw_noise(rng, &self.origin_factor, noise);
        let x0 = &p.origin_mean + &e0;
        let xn =
            &p.dest_mean + &p.boundary.dest_gain * &e0 + draw_noise(rng, &self.dest_factor, noise);
        let mut states = Vec::with_capacity(n + 1);
        states.push(x0);
        for k in 1..n {
            let next = p.evo_prev(k) * &states[k - 1]
                + p.evo_dest(k) * &xn
                + draw_noise(rng, &self.step_factors[k - 1], noise);
            states.push(next);
        }
        states.push(xn);
        Trajectory::new(states).expect("horizon >= 2 by construction")
    }
}

/// One destination-directed sample path, deterministic in `seed`.
pub fn sample_ddt(params: &CmlParams, seed: u64, noise: Noise) -> Result<Trajectory> {
    Ok(CmlSampler::new(params)?.sample(&mut seeded_rng(seed), noise))
}
