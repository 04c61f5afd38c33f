use std::fs;
use std::path::{Path, PathBuf};

use bfr_core::degradation::DegradationRanges;
use bfr_core::diffusion::SamplerConfig;
use bfr_core::net::ModelConfig;
use bfr_core::training::TrainConfig;
use bfr_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides every seed in the config.
pub const SEED_ENV: &str = "BFR_SEED";

/// File name of the materialized config inside each run directory.
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    pub ranges: DegradationRanges,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            ranges: DegradationRanges::default(),
            seed: 0,
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degrade: DegradeConfig,
    pub sample: SamplerConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => Ok(Self::default()),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.degrade.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
    }

    /// Apply `BFR_SEED` (from `env_seed`), then an explicit `--seed`.
    pub fn apply_seed_overrides(&mut self, env_seed: Option<&str>, flag: Option<u64>) -> Result<()> {
        if let Some(s) = env_seed {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        if let Some(seed) = flag {
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.degrade.ranges.validate()?;
        if self.degrade.parallelism == 0 {
            return Err(Error::Config("degrade.parallelism must be at least 1".into()));
        }
        self.sample.validate(self.model.timesteps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Write the materialized config to `dir/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
