//! Layered `key=value` configuration: built-in defaults, then an optional
//! file, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let k = k.trim().replace('-', "_");
        if k.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    /// Unknown keys in the file or flags are usage errors.
    pub fn resolve(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        flags: Vec<(String, String)>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut layers = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            layers.extend(parse_config(&text)?);
        }
        layers.extend(flags);
        for (k, v) in layers {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(CliError::Usage(format!("unknown config key '{k}'"))),
            }
        }
        Ok(Self { values })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no default for '{key}'"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse().map_err(|_| CliError::Usage(format!("invalid value '{raw}' for {key}")))
    }

    /// Empty string means unset.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        if self.str(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" | "" => Ok(false),
            other => Err(CliError::Usage(format!("invalid boolean '{other}' for {key}"))),
        }
    }

    /// Comma-separated list; empty string gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|t| t.trim().parse().map_err(|_| CliError::Usage(format!("invalid list entry '{t}' for {key}"))))
            .collect()
    }
}
