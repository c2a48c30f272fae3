//! Run configuration: one TOML document whose keys mirror the component
//! parameters. Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::PlyMode;
use crate::perturb::NoiseSpec;
use crate::trainer::TrainConfig;

/// Which positions the uncertainty percentile is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileScope {
    /// Only positions that survived the density threshold.
    #[default]
    AboveThreshold,
    /// Every grid position.
    FullGrid,
}

impl PercentileScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            PercentileScope::AboveThreshold => "above_threshold",
            PercentileScope::FullGrid => "full_grid",
        }
    }
}

impl fmt::Display for PercentileScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PercentileScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "above_threshold" | "above-threshold" => Ok(PercentileScope::AboveThreshold),
            "full_grid" | "full-grid" => Ok(PercentileScope::FullGrid),
            _ => Err(Error::Config(format!("unknown percentile scope '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory (or manifest file).
    pub dataset: PathBuf,
    /// Ground-truth sidecar; looked up next to the dataset when absent.
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub members: usize,
    pub parallel_members: bool,
    pub grid_res: usize,
    pub density_threshold: f64,
    pub percentile: f64,
    pub percentile_scope: PercentileScope,
    /// Artifact distance scale in extraction-grid cell widths.
    pub surface_eps_cells: f64,
    pub histogram_bins: usize,
    pub ply_mode: PlyMode,
    /// Translation noise as a percentage of the rig circumference. Resolved
    /// into `noise.sigma_t` before the run starts.
    pub sigma_t_percent: Option<f64>,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            ground_truth: None,
            out_dir: PathBuf::from("out"),
            members: 10,
            parallel_members: false,
            grid_res: 64,
            density_threshold: 15.0,
            percentile: 90.0,
            percentile_scope: PercentileScope::AboveThreshold,
            surface_eps_cells: 2.0,
            histogram_bins: 50,
            ply_mode: PlyMode::BinaryLe,
            sigma_t_percent: None,
            noise: NoiseSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.members < 2 {
            return bad("ensemble requires M ≥ 2".into());
        }
        if self.grid_res < 2 {
            return bad(format!("grid_res must be ≥ 2, got {}", self.grid_res));
        }
        if !self.density_threshold.is_finite() {
            return bad("density_threshold must be finite".into());
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return bad(format!("percentile must lie in (0, 100], got {}", self.percentile));
        }
        if !(self.surface_eps_cells.is_finite() && self.surface_eps_cells > 0.0) {
            return bad("surface_eps_cells must be positive".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be ≥ 1".into());
        }
        if let Some(p) = self.sigma_t_percent {
            if !(p.is_finite() && p >= 0.0) {
                return bad(format!("sigma_t_percent must be finite and ≥ 0, got {p}"));
            }
            if self.noise.sigma_t != 0.0 {
                return bad("set either noise.sigma_t or sigma_t_percent, not both".into());
            }
        }
        let as_config = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        self.noise.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)
    }
}
