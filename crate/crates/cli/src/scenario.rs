//! Turning a [`ScenarioConfig`] into models.

use gtraj::cml::{derive_induced_params_stationary, set_endpoint_density, EndpointDensity};
use gtraj::estimation::{position_selector, MeasurementModel};
use gtraj::guided::{
    assemble_joint, assemble_joint_destination, build_cml_guided, build_markov_guided,
    InitialDensity, JointStateSpace, Layout,
};
use gtraj::markov::{MarkovModel, NcvConfig};
use gtraj::{Mat, Vector};

use crate::config::{check_len, matrix, Observe, ScenarioConfig};
use crate::error::{CliError, CliResult};

/// A validated scenario: the shared motion model, the assembled joint model
/// and the sensors.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub f: Mat,
    pub q: Mat,
    /// Set when the motion model is NCV.
    pub ncv: Option<NcvConfig>,
    pub joint: JointStateSpace,
    pub measurement: MeasurementModel,
    pub terminal_cov: Mat,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> CliResult<Self> {
        let m = &config.model;
        let (f, q, ncv) = match (&m.transition, &m.noise) {
            (Some(t), Some(n)) => {
                let d = t.len();
                if d == 0 {
                    return Err(CliError::Config("model.transition is empty".into()));
                }
                if m.horizon < 2 {
                    return Err(CliError::Config(format!(
                        "horizon N must be >= 2, got {}",
                        m.horizon
                    )));
                }
                (
                    matrix(t, d, "model.transition")?,
                    matrix(n, d, "model.noise")?,
                    None,
                )
            }
            (None, None) => {
                let cfg = NcvConfig {
                    period: m.period,
                    psd: m.psd,
                    planar: m.planar,
                    horizon: m.horizon,
                };
                cfg.validate()?;
                let (f, q) = cfg.matrices();
                (f, q, Some(cfg))
            }
            _ => {
                return Err(CliError::Config(
                    "model.transition and model.noise must be given together".into(),
                ))
            }
        };
        let d = f.nrows();
        let n = m.horizon;

        let g = &config.guide;
        check_len(g.init_mean.len(), d, "guide.init_mean")?;
        let guide_mean = Vector::from_column_slice(&g.init_mean);
        let guide_cov = g.init_cov.to_matrix(d, "guide.init_cov")?;

        let o = &config.object;
        check_len(o.init_mean.len(), d, "object.init_mean")?;
        let object_init = InitialDensity {
            mean: Vector::from_column_slice(&o.init_mean),
            cov: o.init_cov.to_matrix(d, "object.init_cov")?,
        };
        if !(o.terminal_eps > 0.0 && o.terminal_eps.is_finite()) {
            return Err(CliError::Config(format!(
                "object.terminal_eps must be > 0, got {}",
                o.terminal_eps
            )));
        }
        let terminal_cov = Mat::identity(d, d) * o.terminal_eps;

        let joint = match &g.destination {
            None => {
                let guide = MarkovModel::time_invariant(&f, &q, n, guide_mean, guide_cov)?;
                assemble_joint(&build_markov_guided(
                    &f,
                    &q,
                    guide,
                    terminal_cov.clone(),
                    object_init,
                )?)?
            }
            Some(dest) => {
                check_len(dest.mean.len(), d, "guide.destination.mean")?;
                let cross_cov = match &dest.cross_cov {
                    Some(c) => c.to_matrix(d, "guide.destination.cross_cov")?,
                    None => Mat::zeros(d, d),
                };
                let ep = EndpointDensity {
                    origin_mean: guide_mean,
                    origin_cov: guide_cov,
                    dest_mean: Vector::from_column_slice(&dest.mean),
                    dest_cov: dest.cov.to_matrix(d, "guide.destination.cov")?,
                    cross_cov,
                };
                let base = derive_induced_params_stationary(&f, &q, n)?;
                let guide = set_endpoint_density(&base, &ep)?;
                assemble_joint_destination(&build_cml_guided(
                    &f,
                    &q,
                    guide,
                    terminal_cov.clone(),
                    object_init,
                )?)?
            }
        };

        let h = match config.measurement.observe {
            Observe::State => Mat::identity(d, d),
            Observe::Position => match ncv {
                Some(c) => position_selector(c.planar),
                None => {
                    return Err(CliError::Config(
                        "measurement.observe = \"position\" needs the NCV model; use \"state\""
                            .into(),
                    ))
                }
            },
        };
        let rows = h.nrows();
        let r_diag = |v: &Option<Vec<f64>>, what: &str| -> CliResult<Mat> {
            match v {
                Some(v) => {
                    check_len(v.len(), rows, what)?;
                    Ok(Mat::from_diagonal(&Vector::from_column_slice(v)))
                }
                None => Ok(Mat::identity(rows, rows)),
            }
        };
        let measurement = MeasurementModel::new(
            h.clone(),
            h,
            r_diag(&config.measurement.object_r, "measurement.object_r")?,
            r_diag(&config.measurement.guide_r, "measurement.guide_r")?,
        )?;

        Ok(Self {
            config,
            f,
            q,
            ncv,
            joint,
            measurement,
            terminal_cov,
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.model.horizon
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// Component names of one block: `pos_x, vel_x, pos_y, vel_y` for planar
    /// NCV, `s0, s1, ...` for a custom model.
    pub fn component_labels(&self) -> Vec<String> {
        match self.ncv {
            Some(c) if c.planar => ["pos_x", "vel_x", "pos_y", "vel_y"]
                .map(String::from)
                .to_vec(),
            Some(_) => ["pos_x", "vel_x"].map(String::from).to_vec(),
            None => (0..self.dim()).map(|i| format!("s{i}")).collect(),
        }
    }

    /// Labels of the stacked state: `x_*`, `d_*` and, with a destination
    /// guide, `dN_*`.
    pub fn stacked_labels(&self) -> Vec<String> {
        let comps = self.component_labels();
        let mut prefixes = vec!["x", "d"];
        if self.joint.layout() == Layout::DestinationGuided {
            prefixes.push("dN");
        }
        prefixes
            .iter()
            .flat_map(|p| comps.iter().map(move |c| format!("{p}_{c}")))
            .collect()
    }

    /// Indices of the position components within a block. Every component
    /// counts as position for a custom model.
    pub fn position_indices(&self) -> Vec<usize> {
        match self.ncv {
            Some(c) if c.planar => vec![0, 2],
            Some(_) => vec![0],
            None => (0..self.dim()).collect(),
        }
    }

    /// `3 · sqrt(tr(position block of Cov(e_N)))`.
    pub fn terminal_gap_threshold(&self) -> f64 {
        let tr: f64 = self
            .position_indices()
            .iter()
            .map(|&i| self.terminal_cov[(i, i)])
            .sum();
        3.0 * tr.sqrt()
    }
}
