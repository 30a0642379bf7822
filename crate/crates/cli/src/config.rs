//! Optional JSON config with command-line overrides.
//!
//! The config file is a flat JSON object whose keys are the long flag names
//! in snake_case (`r_plus`, `t_end`, ...). Flags given on the command line
//! win over the file.

use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub fn load(path: Option<&Path>) -> anyhow::Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str::<Value>(&text)
        .with_context(|| format!("parsing config {}", path.display()))?
    {
        Value::Object(map) => Ok(map),
        _ => bail!("config {} must be a JSON object", path.display()),
    }
}

/// Overlays the explicitly set fields of `flags` on `config` and reads the
/// result back as `T`.
pub fn merge<F: Serialize, T: DeserializeOwned>(
    config: &Map<String, Value>,
    flags: &F,
) -> anyhow::Result<T> {
    let mut merged = config.clone();
    if let Value::Object(set) = serde_json::to_value(flags)? {
        for (k, v) in set {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}
