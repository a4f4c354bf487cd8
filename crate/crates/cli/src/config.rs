//! Simulation campaign documents.
//!
//! ```json
//! {
//!   "name": "size",
//!   "defaults": { "replications": 1000, "het_amplitude": 0.1 },
//!   "rows": [ { "label": "I", "clusters": 50, "periods": 100, "rho": 0.25 } ]
//! }
//! ```
//!
//! `defaults` accepts every simulation setting; each row overrides a subset.
//! Unknown keys are rejected at every level.

use std::path::Path;

use hetvar::estimators::EstimatorChoice;
use hetvar::regression::BandwidthRule;
use hetvar::simulation::{HetPattern, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub defaults: SimulationConfig,
    pub rows: Vec<RowConfig>,
    /// Report paths; command-line flags take precedence.
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<String>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    pub label: String,
    pub clusters: Option<usize>,
    pub periods: Option<usize>,
    pub rho: Option<f64>,
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    pub w_alpha: Option<f64>,
    pub w_gamma: Option<f64>,
    pub w_eps: Option<f64>,
    pub het_amplitude: Option<f64>,
    pub het_pattern: Option<HetPattern>,
    pub replications: Option<usize>,
    pub master_seed: Option<u64>,
    pub methods: Option<Vec<EstimatorChoice>>,
    pub bandwidth: Option<BandwidthRule>,
    pub alpha_level: Option<f64>,
}

impl RowConfig {
    pub fn resolve(&self, defaults: &SimulationConfig) -> SimulationConfig {
        let d = defaults.clone();
        SimulationConfig {
            clusters: self.clusters.unwrap_or(d.clusters),
            periods: self.periods.unwrap_or(d.periods),
            rho: self.rho.unwrap_or(d.rho),
            beta0: self.beta0.unwrap_or(d.beta0),
            beta1: self.beta1.unwrap_or(d.beta1),
            w_alpha: self.w_alpha.unwrap_or(d.w_alpha),
            w_gamma: self.w_gamma.unwrap_or(d.w_gamma),
            w_eps: self.w_eps.unwrap_or(d.w_eps),
            het_amplitude: self.het_amplitude.unwrap_or(d.het_amplitude),
            het_pattern: self.het_pattern.unwrap_or(d.het_pattern),
            replications: self.replications.unwrap_or(d.replications),
            master_seed: self.master_seed.unwrap_or(d.master_seed),
            methods: self.methods.clone().unwrap_or(d.methods),
            bandwidth: self.bandwidth.unwrap_or(d.bandwidth),
            alpha_level: self.alpha_level.unwrap_or(d.alpha_level),
        }
    }
}

/// Row label plus fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedRow {
    pub label: String,
    pub config: SimulationConfig,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.rows.is_empty() {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: "at least one row is required".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Applies overrides and validates every row before any work starts.
    pub fn resolve(
        &self,
        path: &Path,
        replications: Option<usize>,
        seed: Option<u64>,
    ) -> Result<Vec<ResolvedRow>, CliError> {
        self.rows
            .iter()
            .map(|row| {
                let mut config = row.resolve(&self.defaults);
                if let Some(r) = replications {
                    config.replications = r;
                }
                if let Some(s) = seed {
                    config.master_seed = s;
                }
                config.validate().map_err(|e| CliError::Config {
                    path: path.to_path_buf(),
                    message: format!("row {}: {e}", row.label),
                })?;
                Ok(ResolvedRow {
                    label: row.label.clone(),
                    config,
                })
            })
            .collect()
    }
}
