use std::path::Path;

use anyhow::Context;
use rcpref::experiment::ExperimentConfig;
use rcpref::models::SamplerConfig;
use rcpref::objectives::ObjectiveConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs, resolved from the config file plus flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub objective: ObjectiveConfig,
    pub policy: PolicyConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { dim: 8 }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: {msg}")]
pub struct ConfigFileError {
    pub path: String,
    pub msg: String,
}

pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| rcpref::Error::Io { path: p.to_path_buf(), source })?;
            toml::from_str(&text)
                .map_err(|e| ConfigFileError { path: p.display().to_string(), msg: e.message().to_string() })
                .context("invalid config file")?
        }
    };
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    cfg.experiment = cfg.experiment.resolved()?;
    cfg.objective.validate()?;
    if cfg.policy.dim == 0 {
        return Err(rcpref::Error::Config("policy.dim must be positive".into()).into());
    }
    Ok(cfg)
}
