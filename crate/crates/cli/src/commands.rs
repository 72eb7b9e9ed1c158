//! The `derive`, `simulate`, `filter` and `predict` commands. Each writes
//! its artifacts under the output directory and returns a report whose
//! `Display` is the console summary.

use std::fmt;
use std::path::PathBuf;

use gtraj::cml::derive_induced_params_stationary;
use gtraj::estimation::{nees, predict_n, run_filter, simulate_measurements_with, GaussianBelief};
use gtraj::guided::{split, GuidedSampler, Layout};
use gtraj::markov::Trajectory;
use gtraj::montecarlo::{map_runs, run_rng, Execution, MomentAccumulator, Noise};
use gtraj::{Mat, Vector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, num, overlay_svg, write_csv, write_json, write_text};
use crate::scenario::Scenario;

/// Command-line overrides of the `[run]` section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
    pub plot: bool,
    pub zero_noise: bool,
}

/// Effective run settings.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub runs: usize,
    pub out_dir: PathBuf,
    pub plot: bool,
    pub noise: Noise,
    pub exec: Execution,
}

impl RunOptions {
    pub fn resolve(cfg: &ScenarioConfig, o: &Overrides) -> CliResult<Self> {
        let runs = o.runs.unwrap_or(cfg.run.runs);
        if runs == 0 {
            return Err(CliError::Config("runs must be >= 1".into()));
        }
        Ok(Self {
            seed: o.seed.unwrap_or(cfg.run.seed),
            runs,
            out_dir: o.out.clone().unwrap_or_else(|| cfg.run.out_dir.clone()),
            plot: o.plot,
            noise: if o.zero_noise { Noise::Off } else { Noise::On },
            exec: Execution::default(),
        })
    }
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

// ---------------------------------------------------------------- derive

#[derive(Debug, Serialize)]
pub struct DerivedStep {
    pub k: usize,
    /// `G_{k,k-1}`
    pub evo_prev: Vec<Vec<f64>>,
    /// `G_{k,N}`
    pub evo_dest: Vec<Vec<f64>>,
    /// `G_k`
    pub evo_noise: Vec<Vec<f64>>,
    pub noise_min_eigenvalue: f64,
    pub noise_condition: f64,
}

#[derive(Debug, Serialize)]
pub struct DeriveReport {
    pub label: Option<String>,
    pub horizon: usize,
    pub dim: usize,
    pub steps: Vec<DerivedStep>,
    pub min_noise_eigenvalue: f64,
    pub max_noise_condition: f64,
    pub all_noise_spd: bool,
}

impl fmt::Display for DeriveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "derived {} parameter triples (dim {}, N = {})",
            self.steps.len(),
            self.dim,
            self.horizon
        )?;
        writeln!(
            f,
            "smallest noise eigenvalue: {:e}",
            self.min_noise_eigenvalue
        )?;
        writeln!(
            f,
            "largest noise condition number: {:e}",
            self.max_noise_condition
        )?;
        write!(f, "all noise covariances SPD: {}", self.all_noise_spd)
    }
}

/// Object evolution parameters `(G_{k,k-1}, G_{k,N}, G_k)` for `k = 1..N-1`,
/// written to `derive.json`.
pub fn derive(s: &Scenario, opts: &RunOptions) -> CliResult<DeriveReport> {
    let params = derive_induced_params_stationary(&s.f, &s.q, s.horizon())?;
    let mut steps = Vec::with_capacity(s.horizon() - 1);
    for k in 1..s.horizon() {
        let g = params.evo_noise(k);
        let eig = g.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        steps.push(DerivedStep {
            k,
            evo_prev: rows_of(params.evo_prev(k)),
            evo_dest: rows_of(params.evo_dest(k)),
            evo_noise: rows_of(g),
            noise_min_eigenvalue: lo,
            noise_condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let min_eig = steps
        .iter()
        .map(|s| s.noise_min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let max_cond = steps.iter().map(|s| s.noise_condition).fold(0.0, f64::max);
    let report = DeriveReport {
        label: s.config.label.clone(),
        horizon: s.horizon(),
        dim: s.dim(),
        steps,
        min_noise_eigenvalue: min_eig,
        max_noise_condition: max_cond,
        all_noise_spd: min_eig > 0.0 && max_cond.is_finite(),
    };
    let dir = ensure_dir(&opts.out_dir)?;
    write_json(&dir.join("derive.json"), &report)?;
    Ok(report)
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub label: Option<String>,
    pub seed: u64,
    pub runs: usize,
    pub zero_noise: bool,
    pub gap_threshold: f64,
    pub runs_within_threshold: usize,
    pub fraction_within_threshold: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub trajectory_files: Vec<String>,
    pub overlay: Option<String>,
}

impl fmt::Display for SimulateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "simulated {} runs (seed {})", self.runs, self.seed)?;
        writeln!(
            f,
            "terminal gap < {:.6}: {} of {} runs ({:.4})",
            self.gap_threshold,
            self.runs_within_threshold,
            self.runs,
            self.fraction_within_threshold
        )?;
        write!(
            f,
            "mean gap {:.6}, max gap {:.6}",
            self.mean_gap, self.max_gap
        )?;
        if let Some(svg) = &self.overlay {
            write!(f, "\noverlay: {svg}")?;
        }
        Ok(())
    }
}

fn trajectory_rows<'a>(
    x: &'a Trajectory,
    d: &'a Trajectory,
) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..=x.horizon()).map(move |k| {
        std::iter::once(k.to_string())
            .chain(x.state(k).iter().map(|&v| num(v)))
            .chain(d.state(k).iter().map(|&v| num(v)))
            .collect()
    })
}

fn trajectory_header(s: &Scenario) -> Vec<String> {
    let comps = s.component_labels();
    std::iter::once("k".to_string())
        .chain(comps.iter().map(|c| format!("x_{c}")))
        .chain(comps.iter().map(|c| format!("d_{c}")))
        .collect()
}

/// Planar points for plotting: `(pos_x, pos_y)` for planar NCV, otherwise
/// the first component against time.
fn plot_points(s: &Scenario, t: &Trajectory) -> Vec<(f64, f64)> {
    match s.ncv {
        Some(c) if c.planar => t.states().iter().map(|v| (v[0], v[2])).collect(),
        _ => t
            .states()
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, v[0]))
            .collect(),
    }
}

fn position_gap(s: &Scenario, x: &Vector, d: &Vector) -> f64 {
    s.position_indices()
        .iter()
        .map(|&i| (x[i] - d[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Sample `runs` object/guide pairs. Writes `simulate/run_NNNNN.csv` for the
/// first `max_trajectory_files` runs, `simulate/terminal_gaps.csv`,
/// `simulate/summary.json`, and `simulate/overlay.svg` (run 0) when
/// plotting.
pub fn simulate(s: &Scenario, opts: &RunOptions) -> CliResult<SimulateReport> {
    let sampler = GuidedSampler::new(&s.joint)?;
    let keep = s.config.run.max_trajectory_files.min(opts.runs);
    let n = s.horizon();
    let results = map_runs(opts.runs, opts.exec, |run| {
        let (x, d) = sampler.sample(&mut run_rng(opts.seed, run as u64), opts.noise);
        let gap = position_gap(s, x.state(n), d.state(n));
        (
            gap,
            (run < keep || (run == 0 && opts.plot)).then_some((x, d)),
        )
    });

    let dir = ensure_dir(&opts.out_dir.join("simulate"))?;
    let header = trajectory_header(s);
    let mut files = Vec::with_capacity(keep);
    for (run, (_, paths)) in results.iter().enumerate().take(keep) {
        let (x, d) = paths.as_ref().expect("kept run");
        let name = format!("run_{run:05}.csv");
        write_csv(&dir.join(&name), &header, trajectory_rows(x, d))?;
        files.push(name);
    }

    let threshold = s.terminal_gap_threshold();
    let gaps: Vec<f64> = results.iter().map(|r| r.0).collect();
    write_csv(
        &dir.join("terminal_gaps.csv"),
        &["run".to_string(), "gap".to_string()],
        gaps.iter()
            .enumerate()
            .map(|(r, g)| vec![r.to_string(), num(*g)]),
    )?;

    let overlay = if opts.plot {
        let (x, d) = results[0].1.as_ref().expect("run 0 kept for plotting");
        let title = format!(
            "{} - object (blue) chasing guide (red), run 0, seed {}",
            s.config.label.as_deref().unwrap_or("scenario"),
            opts.seed
        );
        write_text(
            &dir.join("overlay.svg"),
            &overlay_svg(&title, &plot_points(s, x), &plot_points(s, d)),
        )?;
        Some("overlay.svg".to_string())
    } else {
        None
    };

    let within = gaps.iter().filter(|&&g| g < threshold).count();
    let report = SimulateReport {
        label: s.config.label.clone(),
        seed: opts.seed,
        runs: opts.runs,
        zero_noise: opts.noise == Noise::Off,
        gap_threshold: threshold,
        runs_within_threshold: within,
        fraction_within_threshold: within as f64 / opts.runs as f64,
        mean_gap: gaps.iter().sum::<f64>() / opts.runs as f64,
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        trajectory_files: files,
        overlay,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- filter

#[derive(Debug, Serialize)]
pub struct FilterReport {
    pub label: Option<String>,
    pub seed: u64,
    pub runs: usize,
    pub stacked_dim: usize,
    pub nees_step: usize,
    /// Average over runs of the NEES at `nees_step`.
    pub mean_nees: f64,
    /// Degrees of freedom at `nees_step`: the stacked dimension, except at
    /// `k = N` in the destination layout.
    pub nees_dof: usize,
    /// Two-sided 95% interval for the run-averaged NEES.
    pub nees_band: (f64, f64),
    pub nees_within_band: bool,
    /// Fraction of steps `1..=N` whose run-averaged NEES lies in the band.
    pub fraction_steps_within_band: f64,
    /// Position RMSE over all runs and steps.
    pub rmse_object_position: f64,
    pub rmse_guide_position: f64,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "filtered {} runs, stacked dimension {}",
            self.runs, self.stacked_dim
        )?;
        writeln!(
            f,
            "average NEES at k = {}: {:.4}, 95% band [{:.4}, {:.4}] -> {}",
            self.nees_step,
            self.mean_nees,
            self.nees_band.0,
            self.nees_band.1,
            if self.nees_within_band {
                "inside"
            } else {
                "outside"
            }
        )?;
        writeln!(
            f,
            "steps with average NEES inside the band: {:.3}",
            self.fraction_steps_within_band
        )?;
        write!(
            f,
            "position RMSE: object {:.6}, guide {:.6}",
            self.rmse_object_position, self.rmse_guide_position
        )
    }
}

/// Two-sided 95% interval for the mean of `runs` independent χ²(dim) draws.
pub fn nees_band(runs: usize, dim: usize) -> (f64, f64) {
    let chi = ChiSquared::new((runs * dim) as f64).expect("positive degrees of freedom");
    let r = runs as f64;
    (chi.inverse_cdf(0.025) / r, chi.inverse_cdf(0.975) / r)
}

/// Degrees of freedom of the NEES at step `k`. In the destination layout
/// `d_N` duplicates `d_k` at `k = N`, so only `[x_N; d_N]` is scored there.
fn nees_dof(s: &Scenario, k: usize) -> usize {
    if s.joint.layout() == Layout::DestinationGuided && k == s.horizon() {
        2 * s.dim()
    } else {
        s.joint.stacked_dim()
    }
}

fn step_nees(s: &Scenario, truth: &Vector, b: &GaussianBelief) -> gtraj::Result<f64> {
    let m = nees_dof(s, b.k);
    if m == b.mean.len() {
        return nees(truth, b);
    }
    let sub = GaussianBelief {
        k: b.k,
        mean: b.mean.rows(0, m).into_owned(),
        cov: b.cov.view((0, 0), (m, m)).into_owned(),
    };
    nees(&truth.rows(0, m).into_owned(), &sub)
}

struct FilterRun {
    nees: Vec<f64>,
    sq_object: Vec<f64>,
    sq_guide: Vec<f64>,
    detail: Option<(Trajectory, Vec<GaussianBelief>)>,
}

/// Monte Carlo filtering from the model prior. Writes
/// `filter/run_00000.csv` (estimates, variances, errors and NEES of run 0),
/// `filter/summary.csv` (per-step averages) and `filter/summary.json`.
pub fn filter(s: &Scenario, opts: &RunOptions) -> CliResult<FilterReport> {
    let n = s.horizon();
    let nees_step = s.config.nees_step();
    if !(1..=n).contains(&nees_step) {
        return Err(CliError::Config(format!(
            "run.nees_step must be in [1, {n}], got {nees_step}"
        )));
    }
    let joint = &s.joint;
    let sampler = GuidedSampler::new(joint)?;
    let prior = GaussianBelief::prior(joint);
    let pos = s.position_indices();
    let (xr, dr) = (joint.object_range(), joint.guide_range());

    let runs = map_runs(opts.runs, opts.exec, |run| -> CliResult<FilterRun> {
        let mut rng = run_rng(opts.seed, run as u64);
        let truth = sampler.sample_stacked(&mut rng, opts.noise);
        let (x, d) = split(joint, &truth);
        let zs = simulate_measurements_with(&x, &d, &s.measurement, &mut rng, opts.noise)?;
        let beliefs = run_filter(joint, &s.measurement, &zs, &prior)?;
        let mut out = FilterRun {
            nees: Vec::with_capacity(n),
            sq_object: Vec::with_capacity(n),
            sq_guide: Vec::with_capacity(n),
            detail: None,
        };
        for b in &beliefs {
            let err = truth.state(b.k) - &b.mean;
            out.nees
                .push(step_nees(s, truth.state(b.k), b).map_err(|e| e.at_step(b.k))?);
            out.sq_object
                .push(pos.iter().map(|&i| err[xr.start + i].powi(2)).sum());
            out.sq_guide
                .push(pos.iter().map(|&i| err[dr.start + i].powi(2)).sum());
        }
        if run == 0 {
            out.detail = Some((truth, beliefs));
        }
        Ok(out)
    })
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    let r = opts.runs as f64;
    let avg = |f: &dyn Fn(&FilterRun) -> f64| runs.iter().map(f).sum::<f64>() / r;
    let mean_nees: Vec<f64> = (0..n).map(|i| avg(&|fr| fr.nees[i])).collect();
    let mse_x: Vec<f64> = (0..n).map(|i| avg(&|fr| fr.sq_object[i])).collect();
    let mse_d: Vec<f64> = (0..n).map(|i| avg(&|fr| fr.sq_guide[i])).collect();
    let dim = joint.stacked_dim();
    let band_at = |k: usize| nees_band(opts.runs, nees_dof(s, k));
    let inside = |k: usize, v: f64| {
        let (lo, hi) = band_at(k);
        v > lo && v < hi
    };

    let dir = ensure_dir(&opts.out_dir.join("filter"))?;
    let labels = s.stacked_labels();
    let (truth, beliefs) = runs[0].detail.as_ref().expect("run 0 detail");
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(labels.iter().map(|l| format!("est_{l}")))
        .chain(labels.iter().map(|l| format!("var_{l}")))
        .chain(labels.iter().map(|l| format!("err_{l}")))
        .chain(std::iter::once("nees".to_string()))
        .collect();
    write_csv(
        &dir.join("run_00000.csv"),
        &header,
        beliefs.iter().zip(&runs[0].nees).map(|(b, e)| {
            let err = truth.state(b.k) - &b.mean;
            std::iter::once(b.k.to_string())
                .chain(b.mean.iter().map(|&v| num(v)))
                .chain(b.cov.diagonal().iter().map(|&v| num(v)))
                .chain(err.iter().map(|&v| num(v)))
                .chain(std::iter::once(num(*e)))
                .collect()
        }),
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &["k", "mean_nees", "rmse_x_pos", "rmse_d_pos"].map(String::from),
        (0..n).map(|i| {
            vec![
                (i + 1).to_string(),
                num(mean_nees[i]),
                num(mse_x[i].sqrt()),
                num(mse_d[i].sqrt()),
            ]
        }),
    )?;

    let report = FilterReport {
        label: s.config.label.clone(),
        seed: opts.seed,
        runs: opts.runs,
        stacked_dim: dim,
        nees_step,
        mean_nees: mean_nees[nees_step - 1],
        nees_dof: nees_dof(s, nees_step),
        nees_band: band_at(nees_step),
        nees_within_band: inside(nees_step, mean_nees[nees_step - 1]),
        fraction_steps_within_band: (1..=n).filter(|&k| inside(k, mean_nees[k - 1])).count() as f64
            / n as f64,
        rmse_object_position: (mse_x.iter().sum::<f64>() / n as f64).sqrt(),
        rmse_guide_position: (mse_d.iter().sum::<f64>() / n as f64).sqrt(),
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// --------------------------------------------------------------- predict

#[derive(Debug, Serialize)]
pub struct HorizonMse {
    pub n: usize,
    pub target_k: usize,
    pub trace_analytic: f64,
    pub trace_monte_carlo: f64,
    /// `‖MSE_mc − Σ_{k+n|k}‖_F / ‖Σ_{k+n|k}‖_F`
    pub rel_frobenius: f64,
}

#[derive(Debug, Serialize)]
pub struct PredictReport {
    pub label: Option<String>,
    pub seed: u64,
    pub runs: usize,
    pub from_k: usize,
    pub horizons: Vec<HorizonMse>,
}

impl fmt::Display for PredictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "predicted from k = {} over {} runs",
            self.from_k, self.runs
        )?;
        for h in &self.horizons {
            write!(
                f,
                "\n  n = {:>3}: tr analytic {:.6}, tr Monte Carlo {:.6}, relative Frobenius gap {:.4}",
                h.n, h.trace_analytic, h.trace_monte_carlo, h.rel_frobenius
            )?;
        }
        Ok(())
    }
}

/// Filter to `from_k`, then predict `n` steps ahead for every configured
/// horizon. Writes `predict/run_00000.csv` (predictions, analytic variances
/// and truth of run 0), `predict/mse.csv` and `predict/summary.json`.
pub fn predict(s: &Scenario, opts: &RunOptions) -> CliResult<PredictReport> {
    let n = s.horizon();
    let from_k = s.config.from_k();
    let horizons = s.config.run.horizons.clone();
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    if horizons.is_empty() {
        return Err(CliError::Config("run.horizons is empty".into()));
    }
    if from_k + max_h > n - 1 {
        return Err(CliError::Config(format!(
            "run.from_k + max(run.horizons) = {} exceeds N - 1 = {}",
            from_k + max_h,
            n - 1
        )));
    }
    let joint = &s.joint;
    let sampler = GuidedSampler::new(joint)?;
    let prior = GaussianBelief::prior(joint);

    type RunOut = (Vec<GaussianBelief>, Vec<Vector>);
    let runs = map_runs(
        opts.runs,
        opts.exec,
        |run| -> CliResult<(Vec<Vector>, Option<RunOut>)> {
            let mut rng = run_rng(opts.seed, run as u64);
            let truth = sampler.sample_stacked(&mut rng, opts.noise);
            let (x, d) = split(joint, &truth);
            let zs = simulate_measurements_with(&x, &d, &s.measurement, &mut rng, opts.noise)?;
            let belief = match from_k {
                0 => prior.clone(),
                k => run_filter(joint, &s.measurement, &zs[..k], &prior)?
                    .pop()
                    .expect("k >= 1"),
            };
            let preds = horizons
                .iter()
                .map(|&h| predict_n(&belief, h, joint))
                .collect::<gtraj::Result<Vec<_>>>()?;
            let errors = preds.iter().map(|p| truth.state(p.k) - &p.mean).collect();
            let detail = (run == 0).then(|| {
                (
                    preds,
                    horizons
                        .iter()
                        .map(|&h| truth.state(from_k + h).clone())
                        .collect(),
                )
            });
            Ok((errors, detail))
        },
    )
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    let (preds, truths) = runs[0].1.as_ref().expect("run 0 detail");
    let dim = joint.stacked_dim();
    let mut summary = Vec::with_capacity(horizons.len());
    for (i, &h) in horizons.iter().enumerate() {
        let mut acc = MomentAccumulator::new(dim);
        for (errors, _) in &runs {
            acc.push(&errors[i]);
        }
        let mc = acc.second_moment();
        let analytic = &preds[i].cov;
        summary.push(HorizonMse {
            n: h,
            target_k: from_k + h,
            trace_analytic: analytic.trace(),
            trace_monte_carlo: mc.trace(),
            rel_frobenius: gtraj::linalg::rel_frobenius(&mc, analytic),
        });
    }

    let dir = ensure_dir(&opts.out_dir.join("predict"))?;
    let labels = s.stacked_labels();
    let header: Vec<String> = ["n", "k"]
        .map(String::from)
        .into_iter()
        .chain(labels.iter().map(|l| format!("pred_{l}")))
        .chain(labels.iter().map(|l| format!("var_{l}")))
        .chain(labels.iter().map(|l| format!("true_{l}")))
        .collect();
    write_csv(
        &dir.join("run_00000.csv"),
        &header,
        horizons
            .iter()
            .zip(preds.iter().zip(truths))
            .map(|(h, (p, t))| {
                [h.to_string(), p.k.to_string()]
                    .into_iter()
                    .chain(p.mean.iter().map(|&v| num(v)))
                    .chain(p.cov.diagonal().iter().map(|&v| num(v)))
                    .chain(t.iter().map(|&v| num(v)))
                    .collect()
            }),
    )?;
    write_csv(
        &dir.join("mse.csv"),
        &[
            "n",
            "k",
            "trace_analytic",
            "trace_monte_carlo",
            "rel_frobenius",
        ]
        .map(String::from),
        summary.iter().map(|h| {
            vec![
                h.n.to_string(),
                h.target_k.to_string(),
                num(h.trace_analytic),
                num(h.trace_monte_carlo),
                num(h.rel_frobenius),
            ]
        }),
    )?;
    let report = PredictReport {
        label: s.config.label.clone(),
        seed: opts.seed,
        runs: opts.runs,
        from_k,
        horizons: summary,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}
