use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use constrest::models::HeaderMode;
use constrest::{ConstraintSpec, Scenario};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Header {
    #[default]
    Auto,
    Present,
    Absent,
}

impl From<Header> for HeaderMode {
    fn from(h: Header) -> Self {
        match h {
            Header::Auto => HeaderMode::Auto,
            Header::Present => HeaderMode::Present,
            Header::Absent => HeaderMode::Absent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateModel {
    /// Multivariate normal mean, all coordinates equal.
    CommonMean,
    /// Normal `(μ, σ)` under a known coefficient of variation.
    LocationScaleNormal,
    /// Exchangeable Gaussian copula on pairwise rank correlations.
    ExchangeableCopula,
    /// Multivariate normal mean under a user constraint.
    MvnMean,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub model: EstimateModel,
    /// CSV path, resolved against the config file's directory.
    pub data: PathBuf,
    #[serde(default)]
    pub header: Header,
    #[serde(default)]
    pub constraint: Option<ConstraintSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub info: Vec<Vec<f64>>,
    pub constraint: ConstraintSpec,
    /// Evaluation point for nonlinear constraints.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub point: Vec<f64>,
    pub constraint: ConstraintSpec,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default)]
    pub threads: Option<usize>,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

/// Resolves `p` against the directory containing `config`.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match config.parent() {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    }
}
