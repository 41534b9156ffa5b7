//! Flat `key = value` run configuration.
//!
//! Every subcommand declares a schema of accepted keys with defaults. Keys
//! outside the schema are rejected so a typo never silently falls back to
//! a default.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

pub const MANIFEST_MARKER: &str = "# replaylab manifest";
const MANIFEST_CONFIG_PREFIX: &str = "config.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("config key `{key}`: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("grid override {0:?} is not `key=values`")]
    BadOverride(String),
}

/// Accepted key with its default and a one-line description.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { name, default, doc }
}

/// Raw key-value pairs before schema checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parses `key = value` lines; `#` starts a comment. A run manifest is
    /// accepted too, in which case only its `config.*` entries are used.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let manifest = text
            .lines()
            .next()
            .is_some_and(|l| l.trim() == MANIFEST_MARKER);
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let mut k = k.trim();
            if manifest {
                match k.strip_prefix(MANIFEST_CONFIG_PREFIX) {
                    Some(rest) => k = rest,
                    None => continue,
                }
            }
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Applies `key=v1,v2;other=v3` overrides.
    pub fn apply_overrides(&mut self, overrides: &str) -> Result<(), ConfigError> {
        for part in overrides
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
        {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(part.to_string()))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }

    /// Checks every key against `schema` and fills in defaults.
    pub fn resolve(&self, schema: &[KeySpec]) -> Result<Config, ConfigError> {
        if let Some(k) = self
            .entries
            .keys()
            .find(|k| !schema.iter().any(|s| s.name == k.as_str()))
        {
            return Err(ConfigError::UnknownKey { key: k.clone() });
        }
        let values = schema
            .iter()
            .map(|s| {
                let v = self
                    .entries
                    .get(s.name)
                    .cloned()
                    .unwrap_or_else(|| s.default.to_string());
                (s.name.to_string(), v)
            })
            .collect();
        Ok(Config { values })
    }
}

/// Fully resolved configuration with typed accessors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key `{key}` missing from schema"))
    }

    fn typed<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        let v = self.str(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.typed(key, "a number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.invalid(key, "must be finite"))
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn u32(&self, key: &str) -> Result<u32, ConfigError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.typed(key, "a non-negative integer")
    }

    /// One of `choices`.
    pub fn choice(&self, key: &str, choices: &[&'static str]) -> Result<&'static str, ConfigError> {
        let v = self.str(key);
        choices
            .iter()
            .copied()
            .find(|c| *c == v)
            .ok_or_else(|| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "one of the documented choices",
            })
    }

    /// Comma-separated numbers; empty means an empty list.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.list(key, "a comma-separated list of numbers")
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        self.list(key, "a comma-separated list of integers")
    }

    fn list<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
        let v = self.str(key);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected,
                })
            })
            .collect()
    }

    /// Comma-separated `W:T` pairs.
    pub fn pair_list(&self, key: &str) -> Result<Vec<(u32, u32)>, ConfigError> {
        let v = self.str(key);
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected: "a comma-separated list of W:T pairs",
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let (w, t) = s.split_once(':').ok_or_else(bad)?;
                Ok((
                    w.trim().parse().map_err(|_| bad())?,
                    t.trim().parse().map_err(|_| bad())?,
                ))
            })
            .collect()
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[KeySpec] = &[
        key("mu", "5.28", "rollout cost ratio"),
        key("pairs", "5:3,4:4", "worker:trainer pairs"),
        key("xs", "1,2,4", "grid"),
    ];

    #[test]
    fn defaults_and_overrides() {
        let raw = RawConfig::parse("# comment\nmu = 6 # trailing\n").unwrap();
        let cfg = raw.resolve(SCHEMA).unwrap();
        assert_eq!(cfg.f64("mu").unwrap(), 6.0);
        assert_eq!(cfg.pair_list("pairs").unwrap(), vec![(5, 3), (4, 4)]);
        let mut raw = raw;
        raw.apply_overrides("xs=0.5,8; mu=1").unwrap();
        let cfg = raw.resolve(SCHEMA).unwrap();
        assert_eq!(cfg.f64_list("xs").unwrap(), vec![0.5, 8.0]);
        assert_eq!(cfg.f64("mu").unwrap(), 1.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RawConfig::parse("muu = 6\n")
            .unwrap()
            .resolve(SCHEMA)
            .unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { key: "muu".into() });
        assert!(err.to_string().contains("muu"));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            RawConfig::parse("mu 6"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RawConfig::parse("mu=1\nmu=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        let cfg = RawConfig::parse("mu = fast")
            .unwrap()
            .resolve(SCHEMA)
            .unwrap();
        assert!(cfg.f64("mu").unwrap_err().to_string().contains("`mu`"));
    }

    #[test]
    fn manifest_round_trip() {
        let text = format!("{MANIFEST_MARKER}\nsubcommand = design\nconfig.mu = 7\nseed = 3\n");
        let cfg = RawConfig::parse(&text).unwrap().resolve(SCHEMA).unwrap();
        assert_eq!(cfg.f64("mu").unwrap(), 7.0);
    }
}
