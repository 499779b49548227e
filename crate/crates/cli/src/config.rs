//! Flat `key = value` run configuration files.
//!
//! Blank lines and `#` comments (whole-line or trailing) are ignored. Keys
//! are the field names of [`RunConfig`]; anything unset keeps its default.
//! Overrides are applied after the file, so they win over file values.

use std::collections::HashSet;
use std::path::Path;

use nllab_core::RunConfig;

use crate::error::CliError;

/// Parses a config file and applies `overrides` in order.
pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    parse_config_str(&text, &path.display().to_string(), overrides)
}

/// Like [`parse_config`] on in-memory text; `origin` labels syntax errors.
pub fn parse_config_str(
    text: &str,
    origin: &str,
    overrides: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| CliError::Syntax {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(syntax(format!("duplicate key '{key}'")));
        }
        config.set(key, value)?;
    }
    for (key, value) in overrides {
        config.set(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("override '{s}' is not of the form key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("override '{s}' has an empty key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
