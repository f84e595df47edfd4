use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Everything needed to repeat a run: pass the manifest back with
/// `--config manifest.json` to reproduce the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub master_seed: u64,
    /// The configuration with command-line overrides applied and all defaults filled in.
    pub config: Config,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<String>, output_dir: String, config: Config) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path,
            output_dir,
            master_seed: config.experiment.seed,
            config,
        }
    }
}
