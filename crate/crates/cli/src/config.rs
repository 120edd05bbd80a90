use std::path::Path;

use rabc::harness::ExperimentConfig;

use crate::error::{CliError, CliResult};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub draws: Option<usize>,
    pub quantile: Option<f64>,
}

pub fn parse_config(text: &str, path: &Path) -> CliResult<ExperimentConfig> {
    toml::from_str(text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        msg: e.to_string().trim_end().to_string(),
    })
}

/// Reads, overrides and validates an experiment config.
pub fn load_config(path: &Path, ov: &Overrides) -> CliResult<(ExperimentConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        msg: format!("cannot read config: {e}"),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config {
        path: path.to_path_buf(),
        msg: "config is not valid UTF-8".into(),
    })?;
    let mut cfg = parse_config(&text, path)?;
    if let Some(s) = ov.seed {
        cfg.root_seed = s;
    }
    if let Some(n) = ov.draws {
        cfg.n_draws = n;
    }
    if let Some(q) = ov.quantile {
        cfg.accept_quantile = q;
    }
    cfg.validate().map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((cfg, bytes))
}
