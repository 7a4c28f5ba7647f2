//! TOML experiment configuration with `--set key=value` overrides.

use std::fs;
use std::path::Path;

use hcl_core::pipeline::AdaptConfig;
use hcl_core::{HclError, Result};
use serde_json::{Map, Number, Value};

/// Reads the config file (if any), applies overrides in order and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<AdaptConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| {
            HclError::config("--config", format!("cannot read {}: {e}", p.display()))
        })?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<AdaptConfig> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| HclError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        reason: e.message().to_string(),
    })?;
    let mut entries = Vec::new();
    flatten("", doc, &mut entries);
    for raw in overrides {
        entries.push(parse_override(raw)?);
    }

    let mut tree = serde_json::to_value(AdaptConfig::default()).expect("default config serializes");
    for (key, value) in entries {
        let slot = lookup(&mut tree, &key)?;
        *slot = to_json(&key, value)?;
        serde_json::from_value::<AdaptConfig>(tree.clone())
            .map_err(|e| HclError::config(&key, format!("type mismatch: {e}")))?;
    }
    let cfg: AdaptConfig = serde_json::from_value(tree).expect("checked after every key");
    cfg.validate()?;
    Ok(cfg)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn flatten(prefix: &str, table: toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            v => out.push((key, v)),
        }
    }
}

/// `key=value`, where the value is read as a TOML value and falls back to a
/// bare string (so `run.method=hcl` needs no quotes).
fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| HclError::config(raw, "override must look like key=value"))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

fn lookup<'a>(tree: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let unknown = || HclError::config(key, "unknown key");
    let (section, field) = key.split_once('.').ok_or_else(unknown)?;
    tree.get_mut(section)
        .and_then(|s| s.get_mut(field))
        .ok_or_else(unknown)
}

fn to_json(key: &str, value: toml::Value) -> Result<Value> {
    Ok(match value {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::Number(i.into()),
        toml::Value::Float(f) => Value::Number(
            Number::from_f64(f)
                .ok_or_else(|| HclError::config(key, format!("{f} is not a finite number")))?,
        ),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Array(items) => Value::Array(
            items
                .into_iter()
                .map(|v| to_json(key, v))
                .collect::<Result<_>>()?,
        ),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Table(_) => Value::Object(Map::new()),
    })
}
