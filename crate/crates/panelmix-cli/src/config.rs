//! Run configuration files (TOML). Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::ingest::CsvSchema;
use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: Option<CsvSchema>,
    pub model: Option<ModelSection>,
    pub em: Option<EmSection>,
    pub fit: Option<FitSection>,
    pub select: Option<SelectSection>,
    pub rank: Option<RankSection>,
    pub simulate: Option<SimulateSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `normal`, or `mixtureK` for K-part normal-mixture errors.
    pub error_family: Option<String>,
    /// `ci` (conditionally independent) or `ar1`.
    pub dynamics: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub n_restarts: Option<usize>,
    pub c1: Option<f64>,
    pub tau_floor: Option<f64>,
    pub sigma_floor_mult: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub m: Option<usize>,
    pub se: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    pub m_max: Option<usize>,
    pub q: Option<Vec<f64>>,
    pub b: Option<usize>,
    /// `bootstrap` or `asymptotic`.
    pub crit_source: Option<String>,
    pub asymptotic_draws: Option<usize>,
    pub early_stop: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub r: Option<usize>,
    pub r_max: Option<usize>,
    pub level: Option<f64>,
    pub b: Option<usize>,
    /// `square` or `khatri_rao`.
    pub construction: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub design: Option<String>,
    /// JSON file with a custom data-generating process.
    pub dgp: Option<PathBuf>,
    /// `size_power` or `selection`; built-in designs imply it.
    pub kind: Option<String>,
    pub reps: Option<usize>,
    pub b: Option<usize>,
    pub q: Option<f64>,
    pub n: Option<usize>,
    pub null_m: Option<usize>,
    pub m_bar: Option<usize>,
    pub families: Option<Vec<String>>,
    pub lrt: Option<bool>,
    pub rank: Option<bool>,
    pub rank_b: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid configuration: {e}")).into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read configuration {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}
