//! Flat key=value settings with layered overrides.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! repeatable `--set KEY=VALUE` flags, then named command-line flags. Every
//! key a command actually consults is recorded with its effective value, so
//! the run manifest captures the full resolved configuration — including
//! defaults the user never spelled out.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};

use radlabel_core::date::IsoDate;

use crate::artifact::read_to_string;
use crate::formats::parse_date;

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    /// Parse the optional config file, then apply `--set` pairs on top.
    pub fn load(config: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = config {
            for (no, line) in read_to_string(path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!("{} line {}: expected `key = value`", path.display(), no + 1)
                })?;
                let key = key.trim();
                if key.is_empty() {
                    bail!("{} line {}: empty key", path.display(), no + 1);
                }
                values.insert(key.to_string(), value.trim().to_string());
            }
        }
        for pair in sets {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set `{pair}`: expected KEY=VALUE"))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self {
            values,
            resolved: BTreeMap::new(),
        })
    }

    /// A named flag beats both the config file and `--set`.
    pub fn override_with<T: Display>(&mut self, key: &str, flag: Option<T>) {
        if let Some(value) = flag {
            self.values.insert(key.to_string(), value.to_string());
        }
    }

    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match self.values.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow!("setting `{key}`: cannot parse `{raw}`: {e}"))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(raw) => {
                let value = raw
                    .parse::<T>()
                    .map_err(|e| anyhow!("setting `{key}`: cannot parse `{raw}`: {e}"))?;
                self.resolved.insert(key.to_string(), value.to_string());
                Ok(Some(value))
            }
            None => Ok(None),
        }
    }

    /// A date-valued setting where the literal `none` disables it.
    pub fn cutoff(&mut self, key: &str, default: Option<IsoDate>) -> Result<Option<IsoDate>> {
        let value = match self.values.get(key) {
            Some(raw) if raw.eq_ignore_ascii_case("none") => None,
            Some(raw) => Some(parse_date(raw).map_err(|e| anyhow!("setting `{key}`: {e}"))?),
            None => default,
        };
        let shown = value.map_or_else(|| "none".to_string(), |d| d.to_string());
        self.resolved.insert(key.to_string(), shown);
        Ok(value)
    }

    /// Record an informational value (paths, derived counts) for the manifest.
    pub fn note<T: Display>(&mut self, key: &str, value: T) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved
    }
}

pub fn parse_f64_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("cannot parse `{s}` as a number: {e}"))
        })
        .collect()
}
