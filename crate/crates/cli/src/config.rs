use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use jmcheck::fitter::{McmcConfig, PriorConfig};
use jmcheck::gof::{ConcordanceOptions, LoessConfig};
use jmcheck::ranef::MhConfig;
use jmcheck::replicate::replication_mh_config;
use jmcheck::scenario::{AnalysisModelKind, ScenarioConfig, SCHEMA_VERSION};

use crate::error::{CliError, Result};

/// Reads a JSON file, reporting the path of the offending field on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_json(&text).map_err(|message| CliError::Config {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_json<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            e.inner().to_string()
        } else {
            format!("field '{field}': {}", e.inner())
        }
    })
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(CliError::Config {
            path: path.to_path_buf(),
            message: format!("field 'schema_version': expected {SCHEMA_VERSION}, got {version}"),
        });
    }
    Ok(())
}

pub fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    let Some(path) = path else {
        return Ok(ScenarioConfig::default());
    };
    let cfg: ScenarioConfig = read_json(path)?;
    cfg.validate().map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_model() -> AnalysisModelKind {
    AnalysisModelKind::TrueModel
}

/// Settings of `jmcheck fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    #[serde(default = "default_model")]
    pub model: AnalysisModelKind,
    /// Scenario whose knots define the longitudinal design.
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub priors: PriorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            schema_version: SCHEMA_VERSION,
            model: default_model(),
            scenario: ScenarioConfig::default(),
            mcmc: McmcConfig::default(),
            priors: PriorConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FitConfig::default());
        };
        let cfg: FitConfig = read_json(path)?;
        check_version(path, cfg.schema_version)?;
        let wrap = |e: jmcheck::Error| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        cfg.scenario.validate().map_err(wrap)?;
        cfg.mcmc.validate().map_err(wrap)?;
        cfg.priors.validate().map_err(wrap)?;
        Ok(cfg)
    }
}

/// Settings of `jmcheck check`; `--span` and `--kappa` override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub loess: LoessConfig,
    #[serde(default)]
    pub concordance: ConcordanceOptions,
    /// Individual mean-function check for this subject instead of the pooled one.
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub max_lag: Option<f64>,
    /// Random-effects sampler for the dynamic and cross-validated regimes.
    #[serde(default = "replication_mh_config")]
    pub mh: MhConfig,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            schema_version: SCHEMA_VERSION,
            loess: LoessConfig::default(),
            concordance: ConcordanceOptions::default(),
            subject: None,
            max_lag: None,
            mh: replication_mh_config(),
        }
    }
}

impl CheckConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CheckConfig::default());
        };
        let cfg: CheckConfig = read_json(path)?;
        check_version(path, cfg.schema_version)?;
        let wrap = |e: jmcheck::Error| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        cfg.loess.validate().map_err(wrap)?;
        cfg.mh.validate().map_err(wrap)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_errors_name_the_field() {
        let err = parse_json::<FitConfig>(r#"{"mcmc": {"n_iter": "many"}}"#).unwrap_err();
        assert!(err.contains("mcmc.n_iter"), "{err}");
        let err = parse_json::<ScenarioConfig>(r#"{"sigma": -1, "n_subject": 3}"#).unwrap_err();
        assert!(err.contains("n_subject"), "{err}");
    }

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(parse_json::<FitConfig>("{}").unwrap(), FitConfig::default());
        assert_eq!(parse_json::<CheckConfig>("{}").unwrap(), CheckConfig::default());
    }
}
