//! TOML run configs with dotted-path overrides.
//!
//! The file is layered over the default config, so every key that the
//! default serializes is addressable by an override. Keys that do not exist
//! there are rejected.

use std::path::{Path, PathBuf};

use ssmrul::train::{DataSource, TrainConfig};
use toml::{Table, Value};

use crate::CliError;

/// A loaded config plus the directory relative data paths resolve against.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub config: TrainConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Data source with relative paths joined to the config directory. The
    /// stored config keeps paths as written so digests do not depend on
    /// where a run directory lives.
    pub fn resolved_data(&self) -> DataSource {
        match &self.config.data {
            DataSource::Cmapss { train, test, rul } => DataSource::Cmapss {
                train: self.base_dir.join(train),
                test: self.base_dir.join(test),
                rul: self.base_dir.join(rul),
            },
            other => other.clone(),
        }
    }
}

fn default_tree() -> Table {
    match Value::try_from(TrainConfig::default()).expect("default config serializes") {
        Value::Table(t) => t,
        _ => unreachable!("config serializes to a table"),
    }
}

/// Layers `user` over `base`. A table whose `source` tag differs from the
/// base replaces it outright, so switching data sources drops the old
/// variant's keys.
fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u))
                if b.get("source") == u.get("source") || u.get("source").is_none() =>
            {
                merge(b, u)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown config key {key:?}"));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(unknown)?;
    let mut node = tree;
    for p in parts {
        node = match node.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => return Err(unknown()),
        };
    }
    match node.get_mut(leaf) {
        Some(slot) if !slot.is_table() => {
            *slot = value;
            Ok(())
        }
        _ => Err(unknown()),
    }
}

/// Parses `KEY=VALUE`. Values are TOML literals; anything that does not
/// parse as one is taken as a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not KEY=VALUE")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Reads `path` (if any), applies overrides and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut tree = default_tree();
    let mut base_dir = PathBuf::from(".");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::from_io(p, e))?;
        let user: Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        merge(&mut tree, user);
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            base_dir = dir.to_path_buf();
        }
    }
    for ov in overrides {
        let (k, v) = parse_override(ov)?;
        set_path(&mut tree, &k, v)?;
    }
    let config: TrainConfig = Value::Table(tree)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(RunConfig { config, base_dir })
}

/// TOML text of a config, suitable for [`load_config`].
pub fn to_toml(cfg: &TrainConfig) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))
}
