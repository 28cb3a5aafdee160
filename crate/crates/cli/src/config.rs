use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use std::path::Path;

/// Base config for `command`: the JSON file when given (a bare config or a
/// manifest written by the same command), otherwise defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if value.get("manifest_version").is_some() {
        let recorded = value.get("command").and_then(|c| c.as_str()).unwrap_or_default();
        if recorded != command {
            bail!("manifest {} was written by `{recorded}`, not `{command}`", path.display());
        }
        value = value["config"].take();
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

/// Seed precedence: flag, config file, `BTL_SEED`, 0.
pub fn resolve_seed(flag: Option<u64>, from_file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(from_file) {
        return Ok(s);
    }
    match std::env::var("BTL_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("BTL_SEED is not an unsigned integer: {v:?}")),
        Err(_) => Ok(0),
    }
}

/// Seed stored in a config file, if the file sets one.
pub fn file_seed(path: Option<&Path>, pointer: &str) -> Result<Option<u64>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let root = if value.get("manifest_version").is_some() { &value["config"] } else { &value };
    Ok(root.pointer(pointer).and_then(|v| v.as_u64()))
}
