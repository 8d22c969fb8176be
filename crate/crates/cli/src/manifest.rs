//! Run configuration and the `manifest.json` record written by `fit`.

use std::path::Path;

use gcgm_core::mcmc::{ChainStats, ConvergenceReport, McmcConfig};
use gcgm_core::summary::DensityStats;
use gcgm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "gcgm-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// JSON schema that every written manifest satisfies.
pub const MANIFEST_SCHEMA: &str = include_str!("../manifest.schema.json");

/// Everything that shapes a fit: the sampler settings plus reporting knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    #[serde(flatten)]
    pub mcmc: McmcConfig,
    /// Inclusion probability at or above which an edge enters the network.
    pub threshold: f64,
    /// Significance level of the Pearson baseline.
    pub pearson_alpha: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            threshold: 0.5,
            pearson_alpha: 0.05,
        }
    }
}

impl FitConfig {
    /// Parses a JSON config file; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::ConfigInvalid("config file must hold a JSON object".into()))?;
        let known = serde_json::to_value(FitConfig::default())?;
        let known = known.as_object().expect("config serializes to an object");
        if let Some(key) = obj.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::ConfigInvalid(format!("unknown config key {key:?}")));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::ConfigInvalid(format!("threshold {} must lie in (0,1)", self.threshold)));
        }
        if !(self.pearson_alpha > 0.0 && self.pearson_alpha < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "pearson_alpha {} must lie in (0,1)",
                self.pearson_alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        Ok(Self {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub converged: bool,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub worst_pair: Option<(usize, usize)>,
}

impl From<&ConvergenceReport> for ConvergenceVerdict {
    fn from(r: &ConvergenceReport) -> Self {
        Self {
            converged: r.converged,
            max_abs_diff: r.max_abs_diff,
            tolerance: r.tolerance,
            worst_pair: r.worst_pair,
        }
    }
}

/// Density of the Pearson baseline against the thresholded posterior mean
/// partial correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pearson: DensityStats,
    pub partial: DensityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub label: String,
    pub directory: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub config: FitConfig,
    pub data: InputFile,
    pub schema: InputFile,
    /// Grouping column and the label this manifest covers, for per-group fits.
    pub group: Option<(String, String)>,
    pub rows: usize,
    pub variables: Vec<String>,
    pub wall_clock_seconds: f64,
    pub convergence: ConvergenceVerdict,
    pub chains: Vec<ChainStats>,
    pub comparison: Option<Comparison>,
    pub groups: Vec<GroupEntry>,
    /// Paths relative to the manifest's directory, manifest excluded.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        for f in &self.outputs {
            if !dir.join(f).is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("listed output {f} was not written"),
                )));
            }
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_modeling_values() {
        let v = serde_json::to_value(FitConfig::default()).unwrap();
        assert_eq!(v["iterations"], 120_000);
        assert_eq!(v["burn_in"], 20_000);
        assert_eq!(v["edge_prior"], 0.2);
        assert_eq!(v["threshold"], 0.5);
    }

    #[test]
    fn config_file_overrides_and_rejects_typos() {
        let c = FitConfig::from_json(r#"{"iterations": 500, "threshold": 0.7}"#).unwrap();
        assert_eq!(c.mcmc.iterations, 500);
        assert_eq!(c.mcmc.burn_in, 20_000);
        assert_eq!(c.threshold, 0.7);
        let err = FitConfig::from_json(r#"{"iteratons": 500}"#).unwrap_err();
        assert_eq!(err.kind(), "ConfigInvalid");
    }
}
