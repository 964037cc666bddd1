//! Value resolution: command-line flag, then `ATLAS_<KEY>` environment
//! variable, then the `--config` file, then the built-in default.
//!
//! The config file holds `key = value` lines; keys are long flag names
//! (`seed`, `apex`, `grid-size`, ...). Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// The invocation is malformed. Maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    env: BTreeMap<String, String>,
}

pub fn env_key(key: &str) -> String {
    format!("ATLAS_{}", key.to_ascii_uppercase().replace('-', "_"))
}

impl Settings {
    /// Reads the process environment and, if given, the config file.
    pub fn load(config: Option<&Path>) -> Result<Self, UsageError> {
        let env = std::env::vars().filter(|(k, _)| k.starts_with("ATLAS_")).collect();
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, env })
    }

    pub fn from_parts(file: BTreeMap<String, String>, env: BTreeMap<String, String>) -> Self {
        Self { file, env }
    }

    /// Where `key` came from, if anywhere but a flag or the default.
    fn lookup(&self, key: &str) -> Option<(&str, String)> {
        let ek = env_key(key);
        if let Some(v) = self.env.get(&ek) {
            return Some((v, ek));
        }
        self.file.get(key).map(|v| (v.as_str(), format!("config key {key}")))
    }

    pub fn opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, UsageError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.lookup(key) {
            Some((raw, origin)) => raw.trim().parse().map(Some).map_err(|e| UsageError(format!("{origin}: {e}"))),
            None => Ok(None),
        }
    }

    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let v = v.trim().trim_matches('"');
        out.insert(k.trim().to_owned(), v.to_owned());
    }
    Ok(out)
}
