//! The JSON run document and seed resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use lssf_core::config::NetworkConfig;
use lssf_core::loss::LossConfig;
use lssf_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "LSSF_SEED";

/// A problem with user-supplied configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Everything a training run needs. Every key is optional; unknown keys are
/// rejected. Paths are resolved against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed. Overrides `network.seed` and `train.seed` once resolved.
    pub seed: Option<u64>,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Training images: a directory with `images/` and `masks/`, or a
    /// JSON-lines manifest.
    pub data: Option<PathBuf>,
    /// Validation images; when absent, `val_fraction` of `data` is held out.
    pub val_data: Option<PathBuf>,
    pub val_fraction: f64,
    /// Output directory.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                ConfigError(inner.to_string())
            } else {
                ConfigError(format!("key `{path}`: {inner}"))
            }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: lssf_core::LssfError| ConfigError(e.to_string());
        self.network.validate().map_err(wrap)?;
        self.loss.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.train.adam.validate().map_err(wrap)?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(ConfigError(format!("key `val_fraction`: {} must lie in [0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    /// Copy the resolved seed into every component that draws randomness.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.network.seed = seed;
        self.train.seed = seed;
    }
}

/// `flag`, then the config document, then `LSSF_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, ConfigError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| ConfigError(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn parse_widths(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("{w:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected 4 widths, got {}", v.len()))
}
