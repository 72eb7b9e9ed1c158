//! Property battery run by `gtraj verify`: the recursive formulas against
//! the dense conditioning oracle on random small instances.
//!
//! Every check is deterministic in its seed, so the report is byte-stable.
//! With fault injection the induced destination gains are scaled by
//! `1 + 1e-6` before comparison, which the battery must flag.

use std::fmt;

use gtraj::cml::{
    derive_induced_params, derive_induced_params_stationary, gk_via_mil, set_endpoint_density,
    CmlParams, EndpointDensity,
};
use gtraj::estimation::{
    predict_n, run_filter, simulate_measurements, GaussianBelief, MeasurementModel,
};
use gtraj::guided::{
    assemble_joint, assemble_joint_destination, build_cml_guided, build_markov_guided, split,
    DestinationGuidedSystem, GuidedSampler, GuidedSystem, InitialDensity, JointStateSpace,
};
use gtraj::linalg::{rel_frobenius, spd_inverse};
use gtraj::markov::{LinearGaussian, MarkovModel};
use gtraj::montecarlo::{seeded_rng, Noise, SimRng};
use gtraj::oracle::{
    cml_joint, gaussian_condition, joint_covariance, joint_with_measurements, Slot,
};
use gtraj::{Mat, Vector};
use rand::Rng;

use crate::error::CliResult;
use crate::scenario::Scenario;

/// Outcome of one property over a batch of random instances.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub max_err: f64,
    pub tol: f64,
    /// First failure, when any instance could not be evaluated.
    pub error: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_err <= self.tol
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} cases={:<4} max_err={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_err,
            self.tol
        )?;
        if let Some(e) = &self.error {
            write!(f, " error: {e}")?;
        }
        Ok(())
    }
}

fn run_check(
    name: &'static str,
    cases: usize,
    tol: f64,
    f: impl FnOnce() -> gtraj::Result<f64>,
) -> Check {
    match f() {
        Ok(max_err) => Check {
            name,
            cases,
            max_err,
            tol,
            error: None,
        },
        Err(e) => Check {
            name,
            cases,
            max_err: f64::INFINITY,
            tol,
            error: Some(e.to_string()),
        },
    }
}

// ------------------------------------------------------ random instances

pub fn random_matrix(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// `A A' + floor · I` with `A` uniform on `[-1, 1]`.
pub fn random_spd(rng: &mut SimRng, d: usize, floor: f64) -> Mat {
    let a = random_matrix(rng, d, d, 1.0);
    let m = &a * a.transpose() + Mat::identity(d, d) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn random_vector(rng: &mut SimRng, d: usize, scale: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Time-varying model with transitions near `0.8 I`, so ten-step products
/// stay well scaled.
pub fn random_markov(rng: &mut SimRng, d: usize, n: usize) -> gtraj::Result<MarkovModel> {
    let transitions = (0..n)
        .map(|_| Mat::identity(d, d) * 0.8 + random_matrix(rng, d, d, 0.3))
        .collect();
    let noises = (0..n).map(|_| random_spd(rng, d, 0.2)).collect();
    let mean = random_vector(rng, d, 2.0);
    let cov = random_spd(rng, d, 0.5);
    MarkovModel::new(transitions, noises, mean, cov)
}

fn random_motion(rng: &mut SimRng, d: usize) -> (Mat, Mat) {
    (
        Mat::identity(d, d) + random_matrix(rng, d, d, 0.2),
        random_spd(rng, d, 0.2),
    )
}

fn random_object(rng: &mut SimRng, d: usize) -> (Mat, InitialDensity) {
    let terminal = random_spd(rng, d, 0.05) * 0.1;
    let init = InitialDensity {
        mean: random_vector(rng, d, 3.0),
        cov: random_spd(rng, d, 0.3),
    };
    (terminal, init)
}

pub fn random_guided(rng: &mut SimRng, d: usize, n: usize) -> gtraj::Result<GuidedSystem> {
    let (f, q) = random_motion(rng, d);
    let guide = random_markov(rng, d, n)?;
    let (terminal, init) = random_object(rng, d);
    build_markov_guided(&f, &q, guide, terminal, init)
}

pub fn random_destination_guided(
    rng: &mut SimRng,
    d: usize,
    n: usize,
) -> gtraj::Result<DestinationGuidedSystem> {
    let (f, q) = random_motion(rng, d);
    let (gf, gq) = random_motion(rng, d);
    let base = derive_induced_params_stationary(&gf, &gq, n)?;
    let joint = random_spd(rng, 2 * d, 0.3);
    let ep = EndpointDensity {
        origin_mean: random_vector(rng, d, 2.0),
        origin_cov: joint.view((0, 0), (d, d)).into_owned(),
        dest_mean: random_vector(rng, d, 10.0),
        dest_cov: joint.view((d, d), (d, d)).into_owned(),
        cross_cov: joint.view((d, 0), (d, d)).into_owned(),
    };
    let guide = set_endpoint_density(&base, &ep)?;
    let (terminal, init) = random_object(rng, d);
    build_cml_guided(&f, &q, guide, terminal, init)
}

pub fn random_measurements(rng: &mut SimRng, d: usize) -> gtraj::Result<MeasurementModel> {
    let rows = 1 + d / 2;
    let hx = random_matrix(rng, rows, d, 1.0);
    let hd = random_matrix(rng, rows, d, 1.0);
    let rx = random_spd(rng, rows, 0.2);
    let rd = random_spd(rng, rows, 0.2);
    MeasurementModel::new(hx, hd, rx, rd)
}

/// Same evolution with every destination gain scaled by `1 + 1e-6`.
fn corrupt(p: &CmlParams) -> gtraj::Result<CmlParams> {
    CmlParams::new(
        p.evo_prev_all().to_vec(),
        p.evo_dest_all().iter().map(|g| g * (1.0 + 1e-6)).collect(),
        p.evo_noise_all().to_vec(),
        p.boundary().clone(),
        p.origin_mean().clone(),
        p.dest_mean().clone(),
    )
}

fn induced(m: &MarkovModel, fault: bool) -> gtraj::Result<CmlParams> {
    let p = derive_induced_params(m)?;
    if fault {
        corrupt(&p)
    } else {
        Ok(p)
    }
}

// ------------------------------------------------------------ properties

/// `(G_{k,k-1}, G_{k,N}, G_k)` against conditioning `p(x_k | x_{k-1}, x_N)`
/// in the Markov joint, for every interior `k`.
pub fn induced_vs_conditioning(cases: usize, seed: u64, fault: bool) -> Check {
    run_check("induced_params_vs_conditioning", cases, 1e-9, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let d = [1, 2, 4][case % 3];
            let n = rng.random_range(2..=10);
            let m = random_markov(&mut rng, d, n)?;
            let p = induced(&m, fault)?;
            let jg = joint_covariance(&m)?;
            for k in 1..n {
                let target = jg.indices(&[Slot::State(k)])?;
                let given = jg.indices(&[Slot::State(k - 1), Slot::State(n)])?;
                let c = gaussian_condition(&jg, &target, &given)?;
                worst = worst
                    .max(rel_frobenius(
                        p.evo_prev(k),
                        &c.weights.columns(0, d).into_owned(),
                    ))
                    .max(rel_frobenius(
                        p.evo_dest(k),
                        &c.weights.columns(d, d).into_owned(),
                    ))
                    .max(rel_frobenius(p.evo_noise(k), &c.cov));
            }
        }
        Ok(worst)
    })
}

/// `G_k` by the matrix inversion lemma against the information form.
pub fn mil_identity(cases: usize, seed: u64) -> Check {
    run_check("matrix_inversion_lemma", cases, 1e-10, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let d = 1 + case % 4;
            let noise = random_spd(&mut rng, d, 0.2);
            let ctrl = random_spd(&mut rng, d, 0.2);
            let a = random_matrix(&mut rng, d, d, 1.5);
            let mil = gk_via_mil(&noise, &a, &ctrl)?;
            let info = spd_inverse(&noise)? + a.transpose() * spd_inverse(&ctrl)? * &a;
            worst = worst.max(rel_frobenius(&mil, &spd_inverse(&info)?));
        }
        Ok(worst)
    })
}

/// Joint covariance of the induced CM_L sequence against the Markov joint.
pub fn distribution_equality(cases: usize, seed: u64, fault: bool) -> Check {
    run_check("induced_distribution_equality", cases, 1e-8, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let d = 1 + case % 4;
            let n = rng.random_range(2..=10);
            let m = random_markov(&mut rng, d, n)?;
            let a = cml_joint(&induced(&m, fault)?)?;
            let b = joint_covariance(&m)?;
            let mean_err = (&a.mean - &b.mean).norm() / b.mean.norm().max(1.0);
            worst = worst.max(rel_frobenius(&a.cov, &b.cov)).max(mean_err);
        }
        Ok(worst)
    })
}

/// Worst errors of one frozen-guide instance: `(coefficients, oracle)`.
fn frozen_guide_errors(rng: &mut SimRng, case: usize, fault: bool) -> gtraj::Result<(f64, f64)> {
    let d = 1 + case % 4;
    let n = rng.random_range(2..=10);
    let (f, q) = random_motion(rng, d);
    let target = random_vector(rng, d, 5.0);
    let guide = MarkovModel::time_invariant(
        &Mat::identity(d, d),
        &q,
        n,
        target.clone(),
        random_spd(rng, d, 0.3),
    )?;
    let (terminal, init) = random_object(rng, d);
    let joint = assemble_joint(&build_markov_guided(&f, &q, guide, terminal, init.clone())?)?;
    let own = MarkovModel::time_invariant(&f, &q, n, init.mean, init.cov)?;
    let cml = induced(&own, fault)?;
    let jg = joint_covariance(&own)?;
    let (xr, dr) = (joint.object_range(), joint.guide_range());
    let (mut coef, mut oracle): (f64, f64) = (0.0, 0.0);
    for k in 1..n {
        let t = joint.transition(k);
        let own_block = t.view((xr.start, xr.start), (d, d)).into_owned();
        let guide_block = t.view((xr.start, dr.start), (d, d)).into_owned();
        let noise_block = joint
            .noise_cov(k)
            .view((xr.start, xr.start), (d, d))
            .into_owned();
        coef = coef
            .max(rel_frobenius(&own_block, cml.evo_prev(k)))
            .max(rel_frobenius(&guide_block, cml.evo_dest(k)))
            .max(rel_frobenius(&noise_block, cml.evo_noise(k)));
        let c = gaussian_condition(
            &jg,
            &jg.indices(&[Slot::State(k)])?,
            &jg.indices(&[Slot::State(k - 1), Slot::State(n)])?,
        )?;
        oracle = oracle
            .max(rel_frobenius(
                &own_block,
                &c.weights.columns(0, d).into_owned(),
            ))
            .max(rel_frobenius(
                &guide_block,
                &c.weights.columns(d, d).into_owned(),
            ))
            .max(rel_frobenius(&noise_block, &c.cov));
    }
    // without noise the guide stays at its initial value
    let (_, g) = GuidedSampler::new(&joint)?.sample(&mut seeded_rng(case as u64), Noise::Off);
    for k in 0..=n {
        coef = coef.max((g.state(k) - &target).amax() / target.amax().max(1.0));
    }
    Ok((coef, oracle))
}

/// Frozen guide (identity transitions, sampled without noise): the object
/// rows of the stacked model equal the CM_L coefficients
/// `(G_{k,k-1}, G_{k,N}, G_k)` of the object's own Markov model, with the
/// guide in the destination role.
pub fn frozen_guide_reduction(cases: usize, seed: u64, fault: bool) -> Check {
    run_check("frozen_guide_reduction", cases, 1e-12, || {
        let mut rng = seeded_rng(seed);
        (0..cases).try_fold(0.0f64, |w, case| {
            Ok(w.max(frozen_guide_errors(&mut rng, case, fault)?.0))
        })
    })
}

/// The same object rows against `p(x_k | x_{k-1}, x_N)` obtained by
/// conditioning the object's own Markov joint.
pub fn frozen_guide_conditioning(cases: usize, seed: u64, fault: bool) -> Check {
    run_check("frozen_guide_vs_conditioning", cases, 1e-9, || {
        let mut rng = seeded_rng(seed);
        (0..cases).try_fold(0.0f64, |w, case| {
            Ok(w.max(frozen_guide_errors(&mut rng, case, fault)?.1))
        })
    })
}

fn batch_error(joint: &JointStateSpace, m: &MeasurementModel, seed: u64) -> gtraj::Result<f64> {
    let stacked = GuidedSampler::new(joint)?.sample_stacked(&mut seeded_rng(seed), Noise::On);
    let (x, d) = split(joint, &stacked);
    let zs = simulate_measurements(&x, &d, m, seed.wrapping_add(1), Noise::On)?;
    let beliefs = run_filter(joint, m, &zs, &GaussianBelief::prior(joint))?;
    let jg = joint_with_measurements(joint, m)?;
    let mut worst: f64 = 0.0;
    for b in &beliefs {
        let given_slots: Vec<Slot> = (1..=b.k).map(Slot::Measurement).collect();
        let c = gaussian_condition(
            &jg,
            &jg.indices(&[Slot::State(b.k)])?,
            &jg.indices(&given_slots)?,
        )?;
        let values = Vector::from_iterator(
            zs[..b.k].iter().map(|z| z.stacked().len()).sum(),
            zs[..b.k]
                .iter()
                .flat_map(|z| z.stacked().iter().copied().collect::<Vec<_>>()),
        );
        let mean = c.mean(&values);
        worst = worst
            .max((&b.mean - &mean).norm() / mean.norm().max(1.0))
            .max(rel_frobenius(&b.cov, &c.cov));
    }
    Ok(worst)
}

/// Recursive filter posterior against conditioning the dense joint of
/// states and measurements on all past measurements (`N = 6`).
pub fn batch_filter_guided(cases: usize, seed: u64, dim: usize) -> Check {
    run_check("batch_filter_guided", cases, 1e-8, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let joint = assemble_joint(&random_guided(&mut rng, dim, 6)?)?;
            let m = random_measurements(&mut rng, dim)?;
            worst = worst.max(batch_error(&joint, &m, seed ^ case as u64)?);
        }
        Ok(worst)
    })
}

/// As [`batch_filter_guided`] for the destination-augmented model.
pub fn batch_filter_destination(cases: usize, seed: u64, dim: usize) -> Check {
    run_check("batch_filter_destination", cases, 1e-8, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let joint = assemble_joint_destination(&random_destination_guided(&mut rng, dim, 6)?)?;
            let m = random_measurements(&mut rng, dim)?;
            worst = worst.max(batch_error(&joint, &m, seed ^ case as u64)?);
        }
        Ok(worst)
    })
}

/// The guide never depends on the object: the guide-from-object transition
/// block and, before the terminal step, the object/guide noise block are
/// exactly zero. Reports the largest offending entry.
pub fn block_sparsity(cases: usize, seed: u64) -> Check {
    run_check("block_sparsity", cases, 0.0, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let d = 1 + case % 4;
            let n = rng.random_range(2..=10);
            let joints = [
                assemble_joint(&random_guided(&mut rng, d, n)?)?,
                assemble_joint_destination(&random_destination_guided(&mut rng, d, n)?)?,
            ];
            for joint in &joints {
                let (xr, dr) = (joint.object_range(), joint.guide_range());
                for k in 1..=n {
                    worst = worst.max(
                        joint
                            .transition(k)
                            .view((dr.start, xr.start), (d, d))
                            .amax(),
                    );
                    if k < n {
                        worst =
                            worst.max(joint.noise_cov(k).view((xr.start, dr.start), (d, d)).amax());
                    }
                }
            }
        }
        Ok(worst)
    })
}

/// `predict_n(predict_n(b, a), c) = predict_n(b, a + c)`.
pub fn predictor_composition(cases: usize, seed: u64) -> Check {
    run_check("predictor_composition", cases, 1e-10, || {
        let mut rng = seeded_rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let d = rng.random_range(1..=2);
            let joint = assemble_joint(&random_guided(&mut rng, d, 10)?)?;
            let (a, c) = (rng.random_range(0..=4), rng.random_range(0..=4));
            let b = GaussianBelief::prior(&joint);
            let two = predict_n(&predict_n(&b, a, &joint)?, c, &joint)?;
            let one = predict_n(&b, a + c, &joint)?;
            worst = worst
                .max(rel_frobenius(&two.cov, &one.cov))
                .max((&two.mean - &one.mean).norm() / one.mean.norm().max(1.0));
        }
        Ok(worst)
    })
}

/// Replacing the endpoint density leaves every evolution matrix
/// bit-identical. Reports the number of differing matrices.
pub fn endpoint_independence(cases: usize, seed: u64) -> Check {
    run_check("endpoint_change_keeps_evolution", cases, 0.0, || {
        let mut rng = seeded_rng(seed);
        let mut differing = 0usize;
        for case in 0..cases {
            let d = 1 + case % 4;
            let n = rng.random_range(2..=10);
            let p = derive_induced_params(&random_markov(&mut rng, d, n)?)?;
            let joint = random_spd(&mut rng, 2 * d, 0.3);
            let ep = EndpointDensity {
                origin_mean: random_vector(&mut rng, d, 2.0),
                origin_cov: joint.view((0, 0), (d, d)).into_owned(),
                dest_mean: random_vector(&mut rng, d, 10.0),
                dest_cov: joint.view((d, d), (d, d)).into_owned(),
                cross_cov: joint.view((d, 0), (d, d)).into_owned(),
            };
            let moved = set_endpoint_density(&p, &ep)?;
            differing += [
                (p.evo_prev_all(), moved.evo_prev_all()),
                (p.evo_dest_all(), moved.evo_dest_all()),
                (p.evo_noise_all(), moved.evo_noise_all()),
            ]
            .iter()
            .map(|(a, b)| a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
            .sum::<usize>();
        }
        Ok(differing as f64)
    })
}

/// Scenario-scale checks: every induced noise covariance is SPD (reported
/// as the count of failures) for the scenario's motion model.
pub fn scenario_noise_spd(s: &Scenario) -> Check {
    run_check("scenario_induced_noise_spd", s.horizon() - 1, 0.0, || {
        let p = derive_induced_params_stationary(&s.f, &s.q, s.horizon())?;
        let bad = p
            .evo_noise_all()
            .iter()
            .filter(|g| gtraj::linalg::check_spd(g, "G_k").is_err())
            .count();
        Ok(bad as f64)
    })
}

/// Settings of a verification run.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances per property.
    pub cases: usize,
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 50,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub inject_fault: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed()).count()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed {}{}",
            self.seed,
            if self.inject_fault {
                " (fault injected)"
            } else {
                ""
            }
        )?;
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(
            f,
            "{}: {} of {} checks passed",
            if self.passed() { "OK" } else { "FAILED" },
            self.checks.len() - self.failures(),
            self.checks.len()
        )
    }
}

/// Run the whole battery; `scenario` adds the scenario-scale checks.
pub fn run_battery(opts: VerifyOptions, scenario: Option<&Scenario>) -> CliResult<VerifyReport> {
    let (s, n, fault) = (opts.seed, opts.cases, opts.inject_fault);
    let mut checks = vec![
        induced_vs_conditioning(n, s ^ 0x01, fault),
        mil_identity(n, s ^ 0x02),
        distribution_equality(n, s ^ 0x03, fault),
        frozen_guide_reduction(n, s ^ 0x04, fault),
        frozen_guide_conditioning(n, s ^ 0x04, fault),
        batch_filter_guided(n.div_ceil(5), s ^ 0x05, 2),
        batch_filter_destination(n.div_ceil(5), s ^ 0x06, 2),
        block_sparsity(n, s ^ 0x07),
        predictor_composition(n, s ^ 0x08),
        endpoint_independence(n, s ^ 0x09),
    ];
    if let Some(sc) = scenario {
        checks.push(scenario_noise_spd(sc));
    }
    Ok(VerifyReport {
        seed: opts.seed,
        inject_fault: opts.inject_fault,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_and_is_repeatable() {
        let opts = VerifyOptions {
            seed: 3,
            cases: 9,
            inject_fault: false,
        };
        let a = run_battery(opts, None).unwrap();
        assert!(a.passed(), "{a}");
        assert_eq!(a.to_string(), run_battery(opts, None).unwrap().to_string());
    }

    #[test]
    fn injected_fault_is_reported() {
        let opts = VerifyOptions {
            seed: 3,
            cases: 9,
            inject_fault: true,
        };
        let r = run_battery(opts, None).unwrap();
        assert!(!r.passed());
        for name in [
            "induced_params_vs_conditioning",
            "induced_distribution_equality",
            "frozen_guide_reduction",
        ] {
            assert!(
                !r.checks.iter().find(|c| c.name == name).unwrap().passed(),
                "{name}"
            );
        }
    }
}
