//! Plain-text `key=value` config files. Command-line flags take precedence
//! over file values, which take precedence over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "trials",
    "format",
    "k",
    "lambdas",
    "horizon",
    "refill",
    "mode",
    "tau",
    "steps",
    "sessions",
    "refill_rounds",
    "levels",
    "initial_verifications",
    "alpha",
    "beta",
    "lambda_la",
    "gamma",
    "c_switch",
    "q_max",
    "confidence_base",
    "timeout_ms",
    "max_in_flight",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("config line {}: expected key=value, got {raw:?}", lineno + 1)).into());
            };
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!("config line {}: unknown key {key:?}", lineno + 1)).into());
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| UsageError(format!("config key {key}: {e}")).into()))
            .transpose()
    }

    /// Resolve a setting: flag, then config file, then default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

/// Parse a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}
