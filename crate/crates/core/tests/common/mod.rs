#![allow(dead_code)]

use gtraj::cml::{
    derive_induced_params_stationary, set_endpoint_density, CmlParams, EndpointDensity,
};
use gtraj::guided::{
    build_cml_guided, build_markov_guided, DestinationGuidedSystem, GuidedSystem, InitialDensity,
};
use gtraj::markov::MarkovModel;
use gtraj::montecarlo::SimRng;
use gtraj::{Mat, Vector};
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// `A A' + floor I` with `A` uniform.
pub fn random_spd(rng: &mut SimRng, d: usize, floor: f64) -> Mat {
    let a = random_matrix(rng, d, d, 1.0);
    let m = &a * a.transpose() + Mat::identity(d, d) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn random_vector(rng: &mut SimRng, d: usize, scale: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Time-varying model with mild transitions so products over ten steps stay
/// well scaled.
pub fn random_markov(rng: &mut SimRng, d: usize, n: usize) -> MarkovModel {
    let transitions = (0..n)
        .map(|_| Mat::identity(d, d) * 0.8 + random_matrix(rng, d, d, 0.3))
        .collect();
    let noises = (0..n).map(|_| random_spd(rng, d, 0.2)).collect();
    let mean = random_vector(rng, d, 2.0);
    let cov = random_spd(rng, d, 0.5);
    MarkovModel::new(transitions, noises, mean, cov).unwrap()
}

pub fn random_init(rng: &mut SimRng, d: usize) -> InitialDensity {
    InitialDensity {
        mean: random_vector(rng, d, 3.0),
        cov: random_spd(rng, d, 0.3),
    }
}

/// Object with random `(F, Q)` chasing a random Markov guide.
pub fn random_guided(rng: &mut SimRng, d: usize, n: usize) -> GuidedSystem {
    let f = Mat::identity(d, d) + random_matrix(rng, d, d, 0.2);
    let q = random_spd(rng, d, 0.2);
    let guide = random_markov(rng, d, n);
    let terminal = random_spd(rng, d, 0.05) * 0.1;
    let init = random_init(rng, d);
    build_markov_guided(&f, &q, guide, terminal, init).unwrap()
}

/// Random destination-directed guide: stationary induced law with a random
/// endpoint density attached.
pub fn random_guide_cml(rng: &mut SimRng, d: usize, n: usize) -> CmlParams {
    let f = Mat::identity(d, d) + random_matrix(rng, d, d, 0.2);
    let q = random_spd(rng, d, 0.2);
    let base = derive_induced_params_stationary(&f, &q, n).unwrap();
    let joint = random_spd(rng, 2 * d, 0.3);
    let ep = EndpointDensity {
        origin_mean: random_vector(rng, d, 2.0),
        origin_cov: joint.view((0, 0), (d, d)).into_owned(),
        dest_mean: random_vector(rng, d, 10.0),
        dest_cov: joint.view((d, d), (d, d)).into_owned(),
        cross_cov: joint.view((d, 0), (d, d)).into_owned(),
    };
    set_endpoint_density(&base, &ep).unwrap()
}

pub fn random_destination_guided(rng: &mut SimRng, d: usize, n: usize) -> DestinationGuidedSystem {
    let f = Mat::identity(d, d) + random_matrix(rng, d, d, 0.2);
    let q = random_spd(rng, d, 0.2);
    let guide = random_guide_cml(rng, d, n);
    let terminal = random_spd(rng, d, 0.05) * 0.1;
    let init = random_init(rng, d);
    build_cml_guided(&f, &q, guide, terminal, init).unwrap()
}

/// Induced CM_L form of a Markov guide with the destination coupling removed.
pub fn markov_guide_without_coupling(guide: &MarkovModel) -> CmlParams {
    use gtraj::markov::LinearGaussian;
    let n = guide.horizon();
    let d = guide.dim();
    let induced = gtraj::cml::derive_induced_params(guide).unwrap();
    CmlParams::new(
        (1..n).map(|k| guide.transition(k).clone()).collect(),
        vec![Mat::zeros(d, d); n - 1],
        (1..n).map(|k| guide.noise_cov(k).clone()).collect(),
        induced.boundary().clone(),
        induced.origin_mean().clone(),
        induced.dest_mean().clone(),
    )
    .unwrap()
}

pub fn rel(a: &Mat, b: &Mat) -> f64 {
    gtraj::linalg::rel_frobenius(a, b)
}
