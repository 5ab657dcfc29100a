//! Flat `key = value` configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value (ws+ comment)?
//! key     := segment ('.' segment)*
//! segment := [A-Za-z0-9_]+
//! ```
//!
//! Values are kept as trimmed strings; lists are comma separated.
//! Repeating a key is an error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Offending key, or `line N` for syntax errors.
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        ConfigError { key: key.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find(" #").or_else(|| raw.find("\t#")) {
                Some(k) => &raw[..k],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = format!("line {}", n + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::new(&at, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(ConfigError::new(&at, format!("invalid key `{k}`")));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::new(k, "key is given twice"));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    pub fn f64(&self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(v) => parse_f64(key, v),
            None => default.ok_or_else(|| ConfigError::new(key, "required key is missing")),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            Some(v) => v.parse().map_err(|_| ConfigError::new(key, format!("`{v}` is not a non-negative integer"))),
            None => Ok(default),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError::new(key, format!("`{v}` is not true or false"))),
            None => Ok(default),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            Some(v) => split_list(v).iter().map(|s| parse_f64(key, s)).collect(),
            None => Ok(Vec::new()),
        }
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(ConfigError::new(key, format!("`{v}` is not a finite number"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let c = Config::parse("# head\n\ngrid.h = 0.25  # step\nname=demo\nlist = 1, 2,3\n").unwrap();
        assert_eq!(c.get("grid.h"), Some("0.25"));
        assert_eq!(c.get("name"), Some("demo"));
        assert_eq!(c.f64_list("list").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(c.f64("missing", Some(2.0)).unwrap(), 2.0);
        assert_eq!(c.f64("missing", None).unwrap_err().key, "missing");
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(Config::parse("a = 1\na = 2").unwrap_err().key, "a");
        assert_eq!(Config::parse("just words").unwrap_err().key, "line 1");
        assert_eq!(Config::parse("x..y = 1").unwrap_err().key, "line 1");
        let c = Config::parse("grid.h = abc\nflag = maybe").unwrap();
        assert_eq!(c.f64("grid.h", None).unwrap_err().key, "grid.h");
        assert_eq!(c.bool("flag", false).unwrap_err().key, "flag");
    }
}
