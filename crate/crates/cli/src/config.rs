//! Experiment configuration, read from TOML with one table per section.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub delay: DelaySection,
    #[serde(default)]
    pub error: ErrorSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub recipe: String,
    #[serde(default = "d_nodes")]
    pub nodes: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub l1: f64,
    #[serde(default = "d_rank")]
    pub rank: usize,
    /// Data seed; the experiment seed when absent.
    pub seed: Option<u64>,
    /// `path`, `ring`, `complete`, or an edge-list file (relative to the config).
    pub graph: Option<String>,
}

fn d_nodes() -> usize {
    4
}
fn d_dim() -> usize {
    10
}
fn d_theta() -> f64 {
    0.5
}
fn d_lambda() -> f64 {
    0.1
}
fn d_rank() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Fusion,
    Decentralized,
}

/// A number, or `"auto"` for twice `ρ_min`.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RhoSetting {
    Value(f64),
    Keyword(String),
}

impl Default for RhoSetting {
    fn default() -> Self {
        Self::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub rho: RhoSetting,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(rename = "T", default = "d_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub eps_stop: f64,
    #[serde(default)]
    pub strict_rho: bool,
}

fn d_eta() -> f64 {
    1.0
}
fn d_horizon() -> usize {
    1000
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            engine: Engine::Fusion,
            rho: RhoSetting::default(),
            eta: d_eta(),
            horizon: d_horizon(),
            eps_stop: 0.0,
            strict_rho: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    #[serde(default)]
    pub tau1: usize,
    #[serde(default = "d_tau2")]
    pub tau2: usize,
    #[serde(default)]
    pub drop: f64,
    /// Defaults to `1 − drop`.
    pub z_freq: Option<f64>,
    /// Per-message loss probability (decentralized engine).
    #[serde(default)]
    pub message_loss: f64,
}

fn d_tau2() -> usize {
    1
}

impl Default for DelaySection {
    fn default() -> Self {
        Self {
            tau1: 0,
            tau2: 1,
            drop: 0.0,
            z_freq: None,
            message_loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKindName {
    #[default]
    Exact,
    Gaussian,
    Quantize,
    Adversarial,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum PatternName {
    #[default]
    Bias,
    Alternating,
    Rotating,
    Opposing,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    #[serde(default)]
    pub kind: ErrorKindName,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub step: f64,
    #[serde(default)]
    pub bound: f64,
    #[serde(default)]
    pub pattern: PatternName,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`; relative graph files resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text)?, base))
    }
}
