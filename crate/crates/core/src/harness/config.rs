use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{ContinuousGather, Env, MatrixGame, SpreadGrid, TabularEnv};
use crate::error::{Error, Result};
use crate::tabular::TabularGame;
use crate::trainer::TrainerConfig;

/// Overrides `output_dir` from the config file when set.
pub const OUTPUT_DIR_ENV: &str = "HAMDPO_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    MatrixGame {
        k: usize,
        target: usize,
    },
    SpreadGrid {
        grid: usize,
        n_agents: usize,
        horizon: usize,
        #[serde(default)]
        layout_seed: u64,
    },
    ContinuousGather {
        speed_scales: Vec<f64>,
        horizon: usize,
        #[serde(default)]
        target: [f64; 2],
    },
    /// A game stored as JSON; a relative path is resolved against the
    /// config file's directory.
    Tabular {
        game: PathBuf,
        horizon: usize,
    },
}

impl EnvConfig {
    pub fn build(&self, base_dir: &Path) -> Result<Env> {
        let wrap = |e: Error| Error::Config(format!("env: {e}"));
        Ok(match self {
            EnvConfig::MatrixGame { k, target } => MatrixGame::new(*k, *target).map_err(wrap)?.into(),
            EnvConfig::SpreadGrid {
                grid,
                n_agents,
                horizon,
                layout_seed,
            } => SpreadGrid::new(*grid, *n_agents, *horizon, *layout_seed)
                .map_err(wrap)?
                .into(),
            EnvConfig::ContinuousGather {
                speed_scales,
                horizon,
                target,
            } => ContinuousGather::new(speed_scales.clone(), *horizon, *target)
                .map_err(wrap)?
                .into(),
            EnvConfig::Tabular { game, horizon } => {
                let path = base_dir.join(game);
                let game = TabularGame::load(&path).map_err(wrap)?;
                TabularEnv::new(Arc::new(game), *horizon).map_err(wrap)?.into()
            }
        })
    }
}

fn default_flush_interval() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Metric files are flushed every this many iterations.
    #[serde(default = "default_flush_interval")]
    pub flush_interval: usize,
    pub env: EnvConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

/// The parts of a config that determine the numbers a run produces.
#[derive(Serialize)]
struct HashedPart<'a> {
    env: &'a EnvConfig,
    trainer: &'a TrainerConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. The output directory is replaced
    /// by `$HAMDPO_OUTPUT_DIR` when that is set.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flush_interval == 0 {
            return Err(Error::Config("flush_interval must be at least 1".into()));
        }
        self.trainer.validate()
    }

    /// Hex SHA-256 of the environment and trainer sections in canonical
    /// JSON form. The output location does not contribute.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&HashedPart {
            env: &self.env,
            trainer: &self.trainer,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
