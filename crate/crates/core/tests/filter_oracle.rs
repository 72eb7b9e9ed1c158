//! Recursive filter and predictor against conditioning in the dense joint of
//! all states and measurements.

mod common;

use common::*;
use gtraj::estimation::{
    extract_destination, extract_guide, extract_object, predict_n, run_filter,
    simulate_measurements, GaussianBelief, Measurement, MeasurementModel,
};
use gtraj::guided::{
    assemble_joint, assemble_joint_destination, build_cml_guided, sample_guided, split,
    GuidedSampler, JointStateSpace,
};
use gtraj::linalg::psd_le;
use gtraj::markov::LinearGaussian;
use gtraj::montecarlo::{seeded_rng, Noise};
use gtraj::oracle::{gaussian_condition, joint_with_measurements, Slot};
use gtraj::{Mat, Vector};
use proptest::prelude::*;

fn random_measurements(r: &mut gtraj::montecarlo::SimRng, d: usize) -> MeasurementModel {
    let hx = random_matrix(r, 1 + d / 2, d, 1.0);
    let hd = random_matrix(r, 1 + d / 2, d, 1.0);
    let rx = random_spd(r, hx.nrows(), 0.2);
    let rd = random_spd(r, hd.nrows(), 0.2);
    MeasurementModel::new(hx, hd, rx, rd).unwrap()
}

fn check_against_batch(joint: &JointStateSpace, m: &MeasurementModel, seed: u64) -> f64 {
    let sampler = GuidedSampler::new(joint).unwrap();
    let stacked = sampler.sample_stacked(&mut seeded_rng(seed), Noise::On);
    let (x, d) = split(joint, &stacked);
    let zs = simulate_measurements(&x, &d, m, seed + 1, Noise::On).unwrap();
    let beliefs = run_filter(joint, m, &zs, &GaussianBelief::prior(joint)).unwrap();
    let jg = joint_with_measurements(joint, m).unwrap();
    let mut worst: f64 = 0.0;
    for b in &beliefs {
        let k = b.k;
        let given_slots: Vec<Slot> = (1..=k).map(Slot::Measurement).collect();
        let given = jg.indices(&given_slots).unwrap();
        let target = jg.indices(&[Slot::State(k)]).unwrap();
        let c = gaussian_condition(&jg, &target, &given).unwrap();
        let values = Vector::from_vec(
            zs[..k]
                .iter()
                .flat_map(|z| z.stacked().iter().copied().collect::<Vec<_>>())
                .collect(),
        );
        let mean = c.mean(&values);
        let mean_err = (&b.mean - &mean).norm() / mean.norm().max(1.0);
        worst = worst.max(mean_err).max(rel(&b.cov, &c.cov));
    }
    worst
}

#[test]
fn filter_equals_batch_conditioning_two_block() {
    let mut r = rng(1);
    for case in 0..12 {
        let d = 1 + case % 2;
        let sys = random_guided(&mut r, d, 6);
        let joint = assemble_joint(&sys).unwrap();
        let m = random_measurements(&mut r, d);
        let err = check_against_batch(&joint, &m, case as u64);
        assert!(err < 1e-8, "case {case}: {err:e}");
    }
}

#[test]
fn filter_equals_batch_conditioning_destination() {
    let mut r = rng(2);
    for case in 0..12 {
        let d = 1 + case % 2;
        let sys = random_destination_guided(&mut r, d, 6);
        let joint = assemble_joint_destination(&sys).unwrap();
        let m = random_measurements(&mut r, d);
        let err = check_against_batch(&joint, &m, 100 + case as u64);
        assert!(err < 1e-8, "case {case}: {err:e}");
    }
}

#[test]
fn prediction_equals_conditioning_on_past_measurements() {
    let mut r = rng(3);
    let sys = random_guided(&mut r, 2, 8);
    let joint = assemble_joint(&sys).unwrap();
    let m = random_measurements(&mut r, 2);
    let (x, d) = sample_guided(&joint, 5, Noise::On).unwrap();
    let zs = simulate_measurements(&x, &d, &m, 6, Noise::On).unwrap();
    let beliefs = run_filter(&joint, &m, &zs, &GaussianBelief::prior(&joint)).unwrap();
    let jg = joint_with_measurements(&joint, &m).unwrap();
    let k = 3;
    let given = jg
        .indices(&(1..=k).map(Slot::Measurement).collect::<Vec<_>>())
        .unwrap();
    let values = Vector::from_vec(
        zs[..k]
            .iter()
            .flat_map(|z| z.stacked().iter().copied().collect::<Vec<_>>())
            .collect(),
    );
    for n in 1..=4 {
        let pred = predict_n(&beliefs[k - 1], n, &joint).unwrap();
        let target = jg.indices(&[Slot::State(k + n)]).unwrap();
        let c = gaussian_condition(&jg, &target, &given).unwrap();
        assert!(rel(&pred.cov, &c.cov) < 1e-8);
        assert!((&pred.mean - c.mean(&values)).norm() < 1e-8 * pred.mean.norm().max(1.0));
    }
}

#[test]
fn zero_coupling_destination_filter_equals_two_block_filter() {
    let mut r = rng(4);
    for _ in 0..5 {
        let sys = random_guided(&mut r, 2, 7);
        let plain = assemble_joint(&sys).unwrap();
        let guide_cml = markov_guide_without_coupling(&sys.guide);
        // Same object law: rebuild the object model from identical inputs.
        let aug_sys = gtraj::guided::DestinationGuidedSystem {
            object: sys.object.clone(),
            guide: guide_cml,
            terminal_cov: sys.terminal_cov.clone(),
            object_init: sys.object_init.clone(),
        };
        let aug = assemble_joint_destination(&aug_sys).unwrap();
        let m = random_measurements(&mut r, 2);
        let (x, d) = sample_guided(&plain, 9, Noise::On).unwrap();
        let zs = simulate_measurements(&x, &d, &m, 10, Noise::On).unwrap();
        // d_N only enters at the terminal step, so compare k <= N-1.
        let a = run_filter(&plain, &m, &zs[..6], &GaussianBelief::prior(&plain)).unwrap();
        let b = run_filter(&aug, &m, &zs[..6], &GaussianBelief::prior(&aug)).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            let (xa, xpa) = extract_object(pa, &plain).unwrap();
            let (xb, xpb) = extract_object(pb, &aug).unwrap();
            let (da, dpa) = extract_guide(pa, &plain).unwrap();
            let (db, dpb) = extract_guide(pb, &aug).unwrap();
            assert!((xa - xb).amax() < 1e-10);
            assert!((da - db).amax() < 1e-10);
            assert!((xpa - xpb).amax() < 1e-10);
            assert!((dpa - dpb).amax() < 1e-10);
            assert!((pa.cov.view((0, 0), (4, 4)) - pb.cov.view((0, 0), (4, 4))).amax() < 1e-10);
        }
    }
}

#[test]
fn destination_uncertainty_shrinks_as_measurements_accrue() {
    let cfg = gtraj::markov::NcvConfig {
        period: 1.0,
        psd: 0.01,
        planar: true,
        horizon: 30,
    };
    let (f, q) = cfg.matrices();
    let mut r = rng(5);
    let guide = random_guide_cml(&mut r, 4, 30);
    let sys = build_cml_guided(
        &f,
        &q,
        guide,
        gtraj::guided::default_terminal_cov(4),
        random_init(&mut r, 4),
    )
    .unwrap();
    let joint = assemble_joint_destination(&sys).unwrap();
    let m = MeasurementModel::position_only(true, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
    let (x, d) = sample_guided(&joint, 1, Noise::On).unwrap();
    let zs = simulate_measurements(&x, &d, &m, 2, Noise::On).unwrap();
    let beliefs = run_filter(&joint, &m, &zs, &GaussianBelief::prior(&joint)).unwrap();
    let mut last = extract_destination(&GaussianBelief::prior(&joint), &joint)
        .unwrap()
        .1;
    for b in &beliefs {
        let (_, p) = extract_destination(b, &joint).unwrap();
        assert!(psd_le(&p, &last, 1e-9), "k = {}", b.k);
        last = p;
    }
}

#[test]
fn extracted_blocks_trace_bound() {
    let mut r = rng(6);
    let sys = random_destination_guided(&mut r, 2, 6);
    let joint = assemble_joint_destination(&sys).unwrap();
    let b = GaussianBelief::prior(&joint);
    let (_, px) = extract_object(&b, &joint).unwrap();
    let (_, pd) = extract_guide(&b, &joint).unwrap();
    assert!(px.trace() + pd.trace() <= b.cov.trace());
    let block_diag = GaussianBelief {
        k: 0,
        mean: Vector::zeros(6),
        cov: Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
    };
    assert_eq!(
        extract_object(&block_diag, &joint).unwrap().1,
        Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]))
    );
}

#[test]
fn missing_measurement_filter_matches_shrunk_batch() {
    // With every guide measurement dropped, the filter equals conditioning on
    // the object measurements alone.
    let mut r = rng(7);
    let sys = random_guided(&mut r, 2, 5);
    let joint = assemble_joint(&sys).unwrap();
    let m = random_measurements(&mut r, 2);
    let (x, d) = sample_guided(&joint, 3, Noise::On).unwrap();
    let full = simulate_measurements(&x, &d, &m, 4, Noise::On).unwrap();
    let object_only: Vec<Measurement> = full
        .iter()
        .map(|z| Measurement {
            object: z.object.clone(),
            guide: None,
        })
        .collect();
    let beliefs = run_filter(&joint, &m, &object_only, &GaussianBelief::prior(&joint)).unwrap();
    let jg = joint_with_measurements(&joint, &m).unwrap();
    let zx = m.object_h().nrows();
    let k = 4;
    let given = jg
        .sub_indices(&(1..=k).map(Slot::Measurement).collect::<Vec<_>>(), 0, zx)
        .unwrap();
    let target = jg.indices(&[Slot::State(k)]).unwrap();
    let c = gaussian_condition(&jg, &target, &given).unwrap();
    let values = Vector::from_vec(
        object_only[..k]
            .iter()
            .flat_map(|z| z.stacked().iter().copied().collect::<Vec<_>>())
            .collect(),
    );
    assert!(rel(&beliefs[k - 1].cov, &c.cov) < 1e-8);
    assert!(
        (&beliefs[k - 1].mean - c.mean(&values)).norm() < 1e-8 * c.mean(&values).norm().max(1.0)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prediction_composes(seed in any::<u64>(), a in 0usize..5, b in 0usize..5) {
        let mut r = rng(seed);
        let sys = random_guided(&mut r, 2, 12);
        let joint = assemble_joint(&sys).unwrap();
        let m = random_measurements(&mut r, 2);
        let (x, d) = sample_guided(&joint, seed, Noise::On).unwrap();
        let zs = simulate_measurements(&x, &d, &m, seed, Noise::On).unwrap();
        let beliefs = run_filter(&joint, &m, &zs[..2], &GaussianBelief::prior(&joint)).unwrap();
        let start = &beliefs[1];
        let whole = predict_n(start, a + b, &joint).unwrap();
        let split = predict_n(&predict_n(start, a, &joint).unwrap(), b, &joint).unwrap();
        prop_assert!(rel(&whole.cov, &split.cov) < 1e-10);
        prop_assert!((&whole.mean - &split.mean).norm() <= 1e-10 * whole.mean.norm().max(1.0));
        prop_assert_eq!(whole.k, 2 + a + b);
        prop_assert!(joint.horizon() == 12);
    }
}
