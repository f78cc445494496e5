use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

use crate::UsageError;

pub const DATA_DIR_ENV: &str = "GEOMI_DATA_DIR";

/// Values from an optional TOML file. A key is looked up in the table named
/// after the subcommand first, then at the top level.
#[derive(Debug, Default)]
pub struct Settings {
    table: toml::Table,
    section: String,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &str) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        Ok(Settings {
            table,
            section: section.to_string(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&toml::Value> {
        self.table
            .get(&self.section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    /// Flag if given, else config value, else `None`.
    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.lookup(key) {
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key}: {e}")).into()),
            None => Ok(None),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.opt(flag, key)?.ok_or_else(|| {
            UsageError(format!(
                "missing --{} (or `{key}` in the config file)",
                key.replace('_', "-")
            ))
            .into()
        })
    }

    /// A list flag falls back to the config only when empty.
    pub fn list<T: DeserializeOwned>(&self, flag: Vec<T>, key: &str) -> Result<Vec<T>> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        Ok(self.opt(None, key)?.unwrap_or_default())
    }
}

/// Relative input paths are taken from `$GEOMI_DATA_DIR` when it is set.
pub fn input_path(p: PathBuf) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p,
    }
}
