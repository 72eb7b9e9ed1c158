//! Scenario files.
//!
//! A scenario is one TOML document with the sections `model`, `guide`,
//! `object`, `measurement` and `run`. Unknown keys anywhere are rejected.
//! Covariances may be written either as a diagonal (`[1.0, 0.1]`) or as a
//! full row-major matrix (`[[1.0, 0.0], [0.0, 0.1]]`).

use std::path::{Path, PathBuf};

use gtraj::{Mat, Vector};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Free-form description, copied into reports.
    #[serde(default)]
    pub label: Option<String>,
    pub model: ModelSection,
    pub guide: GuideSection,
    pub object: ObjectSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Motion model shared by object and guide. NCV by default; `transition`
/// and `noise` together replace it with an arbitrary time-invariant model.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_psd")]
    pub psd: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_true")]
    pub planar: bool,
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideSection {
    pub init_mean: Vec<f64>,
    pub init_cov: CovSpec,
    /// Present for a destination-directed guide.
    #[serde(default)]
    pub destination: Option<DestinationSection>,
}

/// Guide endpoint: `d_N` mean and covariance and `Cov(d_N, d_0)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DestinationSection {
    pub mean: Vec<f64>,
    pub cov: CovSpec,
    #[serde(default)]
    pub cross_cov: Option<CovSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    pub init_mean: Vec<f64>,
    pub init_cov: CovSpec,
    /// `Cov(e_N) = terminal_eps · I`.
    #[serde(default = "default_terminal_eps")]
    pub terminal_eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observe {
    /// Position components only.
    #[default]
    Position,
    /// The full state.
    State,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(default)]
    pub observe: Observe,
    /// Diagonal of `R^x`; unit variances when absent.
    #[serde(default)]
    pub object_r: Option<Vec<f64>>,
    /// Diagonal of `R^d`; unit variances when absent.
    #[serde(default)]
    pub guide_r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Prediction origin; `horizon / 5` when absent.
    #[serde(default)]
    pub from_k: Option<usize>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    /// Step at which the filter NEES is tested; `horizon / 2` when absent.
    #[serde(default)]
    pub nees_step: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// `simulate` writes one trajectory CSV for each of the first this many
    /// runs; statistics always use every run.
    #[serde(default = "default_max_files")]
    pub max_trajectory_files: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: default_runs(),
            from_k: None,
            horizons: default_horizons(),
            nees_step: None,
            out_dir: default_out_dir(),
            max_trajectory_files: default_max_files(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_matrix(&self, dim: usize, what: &str) -> CliResult<Mat> {
        match self {
            CovSpec::Diagonal(v) => {
                check_len(v.len(), dim, what)?;
                Ok(Mat::from_diagonal(&Vector::from_column_slice(v)))
            }
            CovSpec::Full(rows) => matrix(rows, dim, what),
        }
    }
}

fn default_period() -> f64 {
    1.0
}
fn default_psd() -> f64 {
    0.005
}
fn default_horizon() -> usize {
    250
}
fn default_true() -> bool {
    true
}
fn default_terminal_eps() -> f64 {
    gtraj::guided::DEFAULT_TERMINAL_EPS
}
fn default_runs() -> usize {
    1
}
fn default_horizons() -> Vec<usize> {
    vec![1, 5, 10]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_max_files() -> usize {
    100
}

pub(crate) fn check_len(got: usize, want: usize, what: &str) -> CliResult<()> {
    if got != want {
        return Err(CliError::Config(format!(
            "{what}: expected {want} entries, got {got}"
        )));
    }
    Ok(())
}

/// Square row-major matrix of size `dim`.
pub(crate) fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> CliResult<Mat> {
    check_len(rows.len(), dim, what)?;
    for row in rows {
        check_len(row.len(), dim, what)?;
    }
    Ok(Mat::from_fn(dim, dim, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_k(&self) -> usize {
        self.run.from_k.unwrap_or(self.model.horizon / 5)
    }

    pub fn nees_step(&self) -> usize {
        self.run.nees_step.unwrap_or(self.model.horizon / 2)
    }
}
