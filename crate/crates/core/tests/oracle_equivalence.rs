//! Recursive formulas checked against the dense joint-Gaussian oracle on
//! random small instances.

mod common;

use common::*;
use gtraj::cml::{
    derive_induced_params, derive_induced_params_stationary, gk_via_mil, set_endpoint_density,
};
use gtraj::guided::{
    assemble_joint, assemble_joint_destination, DestinationGuidedSystem, GuidedSystem,
};
use gtraj::linalg::{congruence, spd_inverse};
use gtraj::markov::{LinearGaussian, MarkovModel};
use gtraj::oracle::{cml_joint, gaussian_condition, joint_covariance, Slot};
use gtraj::{Mat, Vector};
use proptest::prelude::*;

#[test]
fn induced_params_match_conditioning_on_random_models() {
    let mut r = rng(100);
    for case in 0..60 {
        let d = [1, 2, 4][case % 3];
        let n = 2 + case % 9;
        let m = random_markov(&mut r, d, n);
        let p = derive_induced_params(&m).unwrap();
        let jg = joint_covariance(&m).unwrap();
        for k in 1..n {
            let target = jg.indices(&[Slot::State(k)]).unwrap();
            let given = jg.indices(&[Slot::State(k - 1), Slot::State(n)]).unwrap();
            let c = gaussian_condition(&jg, &target, &given).unwrap();
            let w_prev = c.weights.columns(0, d).into_owned();
            let w_dest = c.weights.columns(d, d).into_owned();
            assert!(rel(p.evo_prev(k), &w_prev) < 1e-9, "case {case} k {k}");
            assert!(rel(p.evo_dest(k), &w_dest) < 1e-9, "case {case} k {k}");
            assert!(rel(p.evo_noise(k), &c.cov) < 1e-9, "case {case} k {k}");
            // structural identity tying the two gains together
            let to_dest = m.transition_product(k).unwrap();
            let rebuilt = m.transition(k) - p.evo_dest(k) * &to_dest * m.transition(k);
            assert!(rel(p.evo_prev(k), &rebuilt) < 1e-9);
        }
    }
}

#[test]
fn induced_sequence_equals_markov_sequence() {
    let mut r = rng(200);
    for case in 0..40 {
        let d = 1 + case % 4;
        let n = 2 + case % 9;
        let m = random_markov(&mut r, d, n);
        let p = derive_induced_params(&m).unwrap();
        let a = cml_joint(&p).unwrap();
        let b = joint_covariance(&m).unwrap();
        assert!(rel(&a.cov, &b.cov) < 1e-8, "case {case}");
        assert!((&a.mean - &b.mean).norm() <= 1e-8 * b.mean.norm().max(1.0));
    }
}

#[test]
fn controllability_equals_explicit_sum() {
    let mut r = rng(300);
    for case in 0..30 {
        let d = 1 + case % 4;
        let n = 2 + case % 9;
        let m = random_markov(&mut r, d, n);
        for k in 1..n {
            let mut sum = Mat::zeros(d, d);
            for j in k..n {
                let prod = m.transition_product(j + 1).unwrap();
                sum += congruence(&prod, m.noise_cov(j + 1));
            }
            assert!(rel(&m.accumulate_controllability(k).unwrap(), &sum) < 1e-12);
        }
        for k in 2..=n {
            let lhs = m.transition_product(k - 1).unwrap();
            let rhs = m.transition_product(k).unwrap() * m.transition(k);
            assert!(rel(&lhs, &rhs) < 1e-12);
        }
    }
}

#[test]
fn changing_endpoints_keeps_evolution_bit_identical() {
    let mut r = rng(400);
    for _ in 0..20 {
        let m = random_markov(&mut r, 3, 7);
        let p = derive_induced_params(&m).unwrap();
        let guide = random_guide_cml(&mut r, 3, 7);
        let q = set_endpoint_density(&p, &guide.endpoint_density()).unwrap();
        assert_eq!(p.evo_prev_all(), q.evo_prev_all());
        assert_eq!(p.evo_dest_all(), q.evo_dest_all());
        assert_eq!(p.evo_noise_all(), q.evo_noise_all());
        // the new endpoint joint is exactly what the sampler equations imply
        let jg = cml_joint(&q).unwrap();
        let ends = jg.indices(&[Slot::State(0), Slot::State(7)]).unwrap();
        let stacked = guide.endpoint_density().stacked_cov();
        assert!(rel(&jg.cross(&ends, &ends), &stacked) < 1e-12);
    }
}

#[test]
fn stationary_route_matches_time_varying_route() {
    let mut r = rng(500);
    for case in 0..20 {
        let d = 1 + case % 4;
        let n = 2 + case % 9;
        let f = Mat::identity(d, d) + random_matrix(&mut r, d, d, 0.3);
        let q = random_spd(&mut r, d, 0.2);
        let s = derive_induced_params_stationary(&f, &q, n).unwrap();
        let tv = MarkovModel::time_invariant(&f, &q, n, Vector::zeros(d), q.clone()).unwrap();
        let t = derive_induced_params(&tv).unwrap();
        for k in 1..n {
            assert!(rel(s.evo_prev(k), t.evo_prev(k)) < 1e-12);
            assert!(rel(s.evo_dest(k), t.evo_dest(k)) < 1e-12);
            assert!(rel(s.evo_noise(k), t.evo_noise(k)) < 1e-12);
        }
    }
}

fn spd_strategy(d: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
        let a = Mat::from_vec(d, d, v);
        let m = &a * a.transpose() + Mat::identity(d, d) * 0.1;
        (&m + m.transpose()) * 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mil_matches_information_form(
        noise in spd_strategy(4),
        ctrl in spd_strategy(4),
        a in proptest::collection::vec(-1.5f64..1.5, 16),
    ) {
        let a = Mat::from_vec(4, 4, a);
        let mil = gk_via_mil(&noise, &a, &ctrl).unwrap();
        let info = spd_inverse(&noise).unwrap() + a.transpose() * spd_inverse(&ctrl).unwrap() * &a;
        let direct = spd_inverse(&info).unwrap();
        prop_assert!(rel(&mil, &direct) < 1e-10);
    }

    #[test]
    fn induced_noise_is_spd(seed in any::<u64>(), d in 1usize..=4, n in 2usize..=10) {
        let mut r = rng(seed);
        let m = random_markov(&mut r, d, n);
        let p = derive_induced_params(&m).unwrap();
        for g in p.evo_noise_all() {
            prop_assert!((g - g.transpose()).amax() <= 1e-12 * g.amax().max(1.0));
            prop_assert!(g.clone().cholesky().is_some());
        }
    }
}

// --- direct expansion of the guided equations, independent of assemble_* ---

/// Affine form `mean + coeff · noise`.
#[derive(Clone)]
struct Affine {
    mean: Vector,
    coeff: Mat,
}

struct Expansion {
    covs: Vec<Mat>,
    width: usize,
}

impl Expansion {
    fn new(dims: &[usize]) -> Self {
        Self {
            covs: Vec::new(),
            width: dims.iter().sum(),
        }
    }

    fn fresh(&mut self, cov: &Mat, mean: Vector) -> Affine {
        let offset: usize = self.covs.iter().map(|c| c.nrows()).sum();
        let d = cov.nrows();
        let mut coeff = Mat::zeros(d, self.width);
        coeff
            .view_mut((0, offset), (d, d))
            .copy_from(&Mat::identity(d, d));
        self.covs.push(cov.clone());
        Affine { mean, coeff }
    }

    fn lin(&self, terms: &[(&Mat, &Affine)], extra: Option<&Affine>) -> Affine {
        let d = terms[0].0.nrows();
        let mut mean = Vector::zeros(d);
        let mut coeff = Mat::zeros(d, self.width);
        for (m, a) in terms {
            mean += *m * &a.mean;
            coeff += *m * &a.coeff;
        }
        if let Some(e) = extra {
            mean += &e.mean;
            coeff += &e.coeff;
        }
        Affine { mean, coeff }
    }

    fn joint(&self, rows: &[Affine]) -> (Vector, Mat) {
        let mut s = Mat::zeros(self.width, self.width);
        let mut o = 0;
        for c in &self.covs {
            s.view_mut((o, o), c.shape()).copy_from(c);
            o += c.nrows();
        }
        let total: usize = rows.iter().map(|a| a.mean.len()).sum();
        let mut b = Mat::zeros(total, self.width);
        let mut mean = Vector::zeros(total);
        let mut r = 0;
        for a in rows {
            let d = a.mean.len();
            b.view_mut((r, 0), (d, self.width)).copy_from(&a.coeff);
            mean.rows_mut(r, d).copy_from(&a.mean);
            r += d;
        }
        (mean, &b * s * b.transpose())
    }
}

fn direct_guided_joint(sys: &GuidedSystem) -> (Vector, Mat) {
    let d = sys.guide.dim();
    let n = sys.guide.horizon();
    let eye = Mat::identity(d, d);
    let mut ex = Expansion::new(&vec![d; 2 * n + 2]);
    let zero = Vector::zeros(d);
    let mut x = vec![ex.fresh(&sys.object_init.cov, sys.object_init.mean.clone())];
    let mut g = vec![ex.fresh(sys.guide.init_cov(), sys.guide.init_mean().clone())];
    for k in 1..=n {
        let w = ex.fresh(sys.guide.noise_cov(k), zero.clone());
        let gk = ex.lin(&[(sys.guide.transition(k), &g[k - 1])], Some(&w));
        let xk = if k < n {
            let e = ex.fresh(&sys.object.noise[k - 1], zero.clone());
            ex.lin(
                &[
                    (&sys.object.own[k - 1], &x[k - 1]),
                    (&sys.object.guide[k - 1], &g[k - 1]),
                ],
                Some(&e),
            )
        } else {
            let e = ex.fresh(&sys.terminal_cov, zero.clone());
            ex.lin(&[(&eye, &gk)], Some(&e))
        };
        x.push(xk);
        g.push(gk);
    }
    let rows: Vec<Affine> = x.into_iter().zip(g).flat_map(|(a, b)| [a, b]).collect();
    ex.joint(&rows)
}

fn direct_destination_joint(sys: &DestinationGuidedSystem) -> (Vector, Mat) {
    let gp = &sys.guide;
    let d = gp.dim();
    let n = gp.horizon();
    let eye = Mat::identity(d, d);
    let b = gp.boundary();
    let zero = Vector::zeros(d);
    let mut ex = Expansion::new(&vec![d; 2 * n + 2]);
    let mut x = vec![ex.fresh(&sys.object_init.cov, sys.object_init.mean.clone())];
    let e0 = ex.fresh(&b.origin_cov, Vector::zeros(d));
    let mut g = vec![ex.lin(
        &[(&eye, &e0)],
        Some(&Affine {
            mean: gp.origin_mean().clone(),
            coeff: Mat::zeros(d, ex.width),
        }),
    )];
    let en = ex.fresh(&b.dest_noise, gp.dest_mean().clone());
    let dn = ex.lin(&[(&b.dest_gain, &e0)], Some(&en));
    for k in 1..n {
        let e = ex.fresh(gp.evo_noise(k), zero.clone());
        let gk = ex.lin(
            &[(gp.evo_prev(k), &g[k - 1]), (gp.evo_dest(k), &dn)],
            Some(&e),
        );
        let ex_k = ex.fresh(&sys.object.noise[k - 1], zero.clone());
        let xk = ex.lin(
            &[
                (&sys.object.own[k - 1], &x[k - 1]),
                (&sys.object.guide[k - 1], &g[k - 1]),
            ],
            Some(&ex_k),
        );
        x.push(xk);
        g.push(gk);
    }
    let eterm = ex.fresh(&sys.terminal_cov, zero.clone());
    x.push(ex.lin(&[(&eye, &dn)], Some(&eterm)));
    g.push(dn.clone());
    let rows: Vec<Affine> = x
        .into_iter()
        .zip(g)
        .flat_map(|(a, b)| [a, b, dn.clone()])
        .collect();
    ex.joint(&rows)
}

#[test]
fn stacked_guided_model_matches_direct_equations() {
    let mut r = rng(600);
    for case in 0..30 {
        let d = 1 + case % 4;
        let n = 2 + case % 9;
        let sys = random_guided(&mut r, d, n);
        let joint = assemble_joint(&sys).unwrap();
        let jg = joint_covariance(&joint).unwrap();
        let (mean, cov) = direct_guided_joint(&sys);
        assert!(rel(&jg.cov, &cov) < 1e-9, "case {case}");
        assert!((&jg.mean - &mean).norm() <= 1e-9 * mean.norm().max(1.0));
        for k in 1..=n {
            let t = joint.transition(k);
            assert!(t.view((d, 0), (d, d)).iter().all(|&v| v == 0.0));
            if k < n {
                assert!(joint
                    .noise_cov(k)
                    .view((0, d), (d, d))
                    .iter()
                    .all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn stacked_destination_model_matches_direct_equations() {
    let mut r = rng(700);
    for case in 0..30 {
        let d = 1 + case % 4;
        let n = 2 + case % 9;
        let sys = random_destination_guided(&mut r, d, n);
        let joint = assemble_joint_destination(&sys).unwrap();
        let jg = joint_covariance(&joint).unwrap();
        let (mean, cov) = direct_destination_joint(&sys);
        assert!(rel(&jg.cov, &cov) < 1e-9, "case {case}");
        assert!((&jg.mean - &mean).norm() <= 1e-9 * mean.norm().max(1.0));
        for k in 1..=n {
            let t = joint.transition(k);
            assert!(t.view((2 * d, 0), (d, 2 * d)).iter().all(|&v| v == 0.0));
            assert!(joint
                .noise_cov(k)
                .view((2 * d, 2 * d), (d, d))
                .iter()
                .all(|&v| v == 0.0));
        }
    }
}

#[test]
fn stacked_moment_recursion_matches_oracle() {
    let mut r = rng(800);
    for _ in 0..10 {
        let sys = random_guided(&mut r, 2, 8);
        let joint = assemble_joint(&sys).unwrap();
        let jg = joint_covariance(&joint).unwrap();
        let mut mean = joint.init_mean().clone();
        let mut cov = joint.init_cov().clone();
        for k in 1..=8 {
            let t = joint.transition(k);
            mean = t * mean;
            cov = congruence(t, &cov) + joint.noise_cov(k);
            let idx = jg.indices(&[Slot::State(k)]).unwrap();
            assert!(rel(&cov, &jg.cross(&idx, &idx)) < 1e-9);
            assert!((&mean - jg.marginal_mean(&idx)).norm() <= 1e-9 * mean.norm().max(1.0));
        }
    }
}
