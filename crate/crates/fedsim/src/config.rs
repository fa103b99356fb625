use std::path::Path;

use fedsim_core::harness::ExperimentConfig;

use crate::error::{file_err, IoError, IoResult};

/// Parses a TOML experiment config. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn load_config(path: &Path) -> IoResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    let cfg = parse_config(&text).map_err(|source| IoError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
