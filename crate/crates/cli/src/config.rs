//! JSON run configuration. Command-line flags override these values, which
//! override built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use merton_core::estimation::CovarianceFloor;
use merton_core::mvn::QmcConfig;
use serde::Deserialize;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub valuation: ValuationSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub params: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub initial_values: Option<Vec<f64>>,
    pub initial_rate: Option<f64>,
    pub payout_ratios: Option<Vec<f64>>,
    /// `ψ_t` rows for `t = 1..=T`; defaults to a constant 1 when `l = 1`.
    pub exog: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub regimes: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub restarts: Option<usize>,
    pub covariance_floor: Option<CovarianceFloor>,
    pub literal_paper_mstep: Option<bool>,
    pub init_params: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationSection {
    pub params: Option<PathBuf>,
    pub t: Option<usize>,
    pub maturity: Option<usize>,
    pub strikes: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub paths: Option<String>,
    pub mc_paths: Option<usize>,
    pub literal_discount: Option<bool>,
    pub literal_paper_cdf: Option<bool>,
    pub emit_paths: Option<bool>,
    pub qmc: Option<QmcConfig>,
    /// Use observed liability-to-equity ratios as the asset expansion points.
    pub data_asset_means: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Invalid(format!(
                "{}: unsupported config version {} (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        Ok(cfg)
    }
}
