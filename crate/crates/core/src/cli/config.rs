//! TOML experiment files.
//!
//! A file may name a `preset` (`main` or `lone-hq`, default `main`); every
//! key it sets is layered over that preset, so a file holding only `seed`
//! is a complete config. Unknown keys, malformed values and out-of-range
//! fields are reported with the dotted field path and, when it can be
//! found, the source line.

use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::federation::ExperimentConfig;

pub const DEFAULT_PRESET: &str = "main";

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_owned()))?;
    let preset = match user.remove("preset") {
        None => DEFAULT_PRESET.to_owned(),
        Some(Value::String(s)) => s,
        Some(other) => {
            return Err(diagnose(
                text,
                "preset",
                &format!("expected a string, found {}", other.type_str()),
            ))
        }
    };
    let base = ExperimentConfig::preset(&preset)?;
    let mut merged = match Value::try_from(&base) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("configs serialize to tables"),
    };
    merge(&mut merged, user);

    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let msg = inner.lines().next().unwrap_or_default();
            let field = match unknown_field(msg) {
                Some(f) if path == "." => f.to_owned(),
                Some(f) if !path.ends_with(&format!(".{f}")) && path != f => format!("{path}.{f}"),
                _ => path,
            };
            diagnose(text, &field, msg)
        })?;
    cfg.validate().map_err(|e| match e {
        Error::Config(msg) => {
            let field = msg.split(':').next().unwrap_or_default().to_owned();
            match locate(text, &field) {
                Some(line) => Error::Config(format!("line {line}: {msg}")),
                None => Error::Config(msg),
            }
        }
        other => other,
    })?;
    Ok(cfg)
}

/// The fully expanded config as TOML; parsing it back yields `cfg`.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config is always serializable")
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

fn diagnose(text: &str, field: &str, msg: &str) -> Error {
    match locate(text, field) {
        Some(line) => Error::Config(format!("line {line}: {field}: {msg}")),
        None => Error::Config(format!("{field}: {msg}")),
    }
}

/// 1-based line on which the dotted `field` is assigned, found by tracking
/// `[section]` headers. Handles plain and dotted keys, not inline tables.
pub(crate) fn locate(text: &str, field: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_owned();
            if section == field {
                return Some(i + 1);
            }
            continue;
        }
        let Some((key, _)) = line.split_once('=') else {
            continue;
        };
        let key: String = key.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if section.is_empty() {
            key
        } else {
            format!("{section}.{key}")
        };
        if full == field {
            return Some(i + 1);
        }
    }
    None
}
