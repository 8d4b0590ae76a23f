//! Optional TOML config file. Every key is optional; command-line flags win
//! over file values, which win over built-in defaults.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! patch_size = 40
//! stride = 10
//! scales = [1.0, 0.9, 0.8, 0.7]
//! augment = ["none", "hflip"]
//!
//! [model]
//! preset = "full"      # or "desk"
//! depth = 16
//! width = 64
//!
//! [train]
//! loss = "sure"
//! epochs = 50
//! batch = 64
//! lr = 1e-4
//! lr_drop = 1e-5
//! drop_epoch = 25
//! fixed_noise = false
//! checkpoint_every = 5
//!
//! [loss]
//! epsilon_scale = 1e-4
//! epsilon_floor = 1e-3
//! probe = "gaussian"   # or "rademacher"
//! probes = 1
//! ```
//!
//! The noise level is deliberately not a config key: it must be given as
//! `--sigma` on every command that needs it.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub patch_size: Option<usize>,
    pub stride: Option<usize>,
    pub scales: Option<Vec<f64>>,
    pub augment: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub depth: Option<usize>,
    pub width: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: Option<String>,
    pub epochs: Option<u32>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_drop: Option<f64>,
    pub drop_epoch: Option<u32>,
    pub fixed_noise: Option<bool>,
    pub checkpoint_every: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub epsilon: Option<f64>,
    pub epsilon_scale: Option<f64>,
    pub epsilon_floor: Option<f64>,
    pub probe: Option<String>,
    pub probes: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| {
            CliError::Core(suredn::Error::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        Self::parse(&text).map_err(|msg| CliError::Config {
            path: path.display().to_string(),
            msg,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}
