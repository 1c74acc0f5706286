//! Layered settings: command-line flags over a config file over defaults.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Loads a `.toml` or `.json` config file into a flat key map.
pub fn load_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            let t: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()))?
        }
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?,
        _ => {
            return Err(CliError::Usage(format!(
                "config file {} must end in .toml or .json",
                path.display()
            )))
        }
    };
    match value {
        Value::Object(map) => Ok(map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()),
        _ => Err(CliError::Usage("config file must hold a table of settings".into())),
    }
}

/// Resolves each setting once and records the value that won.
pub struct Resolver {
    file: Map<String, Value>,
    consumed: BTreeSet<String>,
    resolved: Map<String, Value>,
}

impl Resolver {
    pub fn new(file: Map<String, Value>) -> Self {
        Resolver {
            file,
            consumed: BTreeSet::new(),
            resolved: Map::new(),
        }
    }

    fn from_file<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        self.consumed.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        if let Ok(v) = serde_json::to_value(value) {
            self.resolved.insert(key.to_string(), v);
        }
    }

    pub fn get<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let file = self.from_file(key)?;
        let value = flag.or(file).unwrap_or(default);
        self.record(key, &value);
        Ok(value)
    }

    pub fn get_opt<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let file = self.from_file(key)?;
        let value = flag.or(file);
        self.record(key, &value);
        Ok(value)
    }

    /// Required setting with no default.
    pub fn require<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.get_opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting `--{}`", key.replace('_', "-"))))
    }

    /// Output locations do not change results, so they are not echoed.
    pub fn output<T: DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let file = self.from_file(key)?;
        Ok(flag.or(file).unwrap_or(default))
    }

    /// Rejects config-file keys that the subcommand never asked for.
    pub fn finish(&self) -> Result<Map<String, Value>, CliError> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.consumed.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys: {unknown:?}")));
        }
        Ok(self.resolved.clone())
    }
}
