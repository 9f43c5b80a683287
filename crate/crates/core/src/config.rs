//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments run to end of line
//! iterations = 2000
//! loss.lambda = 0.8
//! densify.strategy = frequency-aware
//! densify.densify_until = 1800
//! background = [1, 1, 1]
//! ```
//!
//! Keys are dotted paths into [`TrainConfig`]. Values are JSON literals;
//! a bare word is taken as a string. Unknown keys are errors.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Parses `text` on top of the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    apply_overrides(&TrainConfig::default(), &pairs)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Sets each dotted key in turn, then validates the result.
pub fn apply_overrides(base: &TrainConfig, pairs: &[(String, String)]) -> Result<TrainConfig> {
    let mut tree = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    for (key, raw) in pairs {
        let slot = lookup(&mut tree, key).ok_or_else(|| Error::UnknownConfigKey(key.clone()))?;
        *slot = coerce(slot, raw);
        serde_json::from_value::<TrainConfig>(tree.clone()).map_err(|e| Error::Config(format!("{key} = {raw}: {e}")))?;
    }
    let cfg: TrainConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn lookup<'a>(tree: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(tree, |node, part| node.as_object_mut()?.get_mut(part))
}

fn coerce(current: &Value, raw: &str) -> Value {
    let parsed = serde_json::from_str::<Value>(raw).ok();
    match (current, parsed) {
        // keep strings such as a pattern or head name literal
        (Value::String(_), Some(v @ Value::String(_))) => v,
        (Value::String(_), _) => Value::String(raw.to_string()),
        // an integer written into a float field stays a float
        (Value::Number(n), Some(Value::Number(p))) if n.is_f64() => p.as_f64().map(Value::from).unwrap_or(Value::Number(p)),
        (_, Some(v)) => v,
        (_, None) => Value::String(raw.to_string()),
    }
}

/// Every leaf of `cfg` as `key = value` lines, readable by [`parse_config`].
pub fn to_flat(cfg: &TrainConfig) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
            other => out.push_str(&format!("{prefix} = {other}\n")),
        }
    }
    let mut out = String::new();
    walk("", &serde_json::to_value(cfg).unwrap_or(Value::Null), &mut out);
    out
}
