//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! a repeated key is an error. Every error carries its 1-based line number.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("missing key {0}")]
    Missing(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected key = value, got {s:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("bad key {k:?}"),
                });
            }
            if entries.insert(k.to_string(), (v.trim().to_string(), line)).is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key {k}"),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Sets a value as if it came from the command line (line 0).
    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Rejects any key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for (k, (_, line)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey {
                    line: *line,
                    key: k.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                line: *line,
                key: key.to_string(),
                msg: e.to_string(),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| ConfigError::Value {
                    line: *line,
                    key: key.to_string(),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types() {
        let c = KvConfig::parse("# comment\n\nseed = 7\nsizes = 1, 2,3\nname=x y\n").unwrap();
        assert_eq!(c.require::<u64>("seed").unwrap(), 7);
        assert_eq!(c.get_list::<u64>("sizes").unwrap().unwrap(), vec![1, 2, 3]);
        assert_eq!(c.raw("name"), Some("x y"));
        assert_eq!(c.get::<u64>("nope").unwrap(), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(KvConfig::parse("a = 1\nbroken\n"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(KvConfig::parse("a = 1\na = 2\n"), Err(ConfigError::Syntax { line: 2, .. })));
        let c = KvConfig::parse("\nseed = x\n").unwrap();
        assert!(matches!(c.get::<u64>("seed"), Err(ConfigError::Value { line: 2, .. })));
        assert!(matches!(c.check_keys(&["other"]), Err(ConfigError::UnknownKey { line: 2, .. })));
    }
}
