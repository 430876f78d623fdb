use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pgnkit_core::{ArWeights, AttackSpec, DqnConfig, PgnConfig};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `paths.reports`.
pub const REPORT_DIR_ENV: &str = "PGNKIT_REPORT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub checkpoints: PathBuf,
    pub datasets: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            checkpoints: "checkpoints".into(),
            datasets: "datasets".into(),
            reports: "reports".into(),
        }
    }
}

/// Everything a command may need, loaded from a sectioned TOML file. Missing
/// sections and keys fall back to the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub paths: Paths,
    pub dqn: DqnConfig,
    pub pgn: PgnConfig,
    pub weights: ArWeights,
    pub attacks: Vec<AttackSpec>,
}

impl ProjectConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.dqn.validate()?;
        cfg.pgn.validate()?;
        cfg.weights.validate()?;
        for a in &cfg.attacks {
            a.validate()?;
        }
        Ok(cfg)
    }

    pub fn report_dir(&self) -> PathBuf {
        std::env::var_os(REPORT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.paths.reports.clone())
    }
}
