//! Config file loading and `--set` overrides.

use std::path::Path;

use crush_core::TrainConfig;
use serde::Deserialize;

/// Field-level problems with the requested configuration. Reported with exit
/// code 2.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config:")?;
        for p in &self.0 {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn parse_value(raw: &str) -> toml::Value {
    // anything that is not a TOML literal is taken as a bare string
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Reads `path` (defaults when `None`), applies `key=value` overrides and the
/// seed, and validates the result.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<TrainConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError(vec![format!("{}: {e}", p.display())]))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError(vec![format!("{}: {e}", p.display())]))?
        }
        None => toml::Table::new(),
    };
    let mut problems = Vec::new();
    for o in overrides {
        match o.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                table.insert(k.trim().to_owned(), parse_value(v.trim()));
            }
            _ => problems.push(format!("--set {o}: expected key=value")),
        }
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    if !problems.is_empty() {
        return Err(ConfigError(problems));
    }
    let config = TrainConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError(vec![e.to_string()]))?;
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError(problems))
    }
}
