//! Layering of command-line flags over a TOML config file.
//!
//! The config file holds an optional top-level `threads` key and one table
//! per subcommand (`[estimate]`, `[fit-propensity]`, ...). Keys mirror the
//! long flag names. A flag given on the command line wins over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub struct ConfigFile {
    pub threads: Option<usize>,
    sections: toml::Table,
}

const COMMANDS: [&str; 8] = [
    "simulate",
    "fit-propensity",
    "fit-prognostic",
    "stratify",
    "balance",
    "estimate",
    "bootstrap",
    "report",
];

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            threads: None,
            sections: toml::Table::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let threads = match table.remove("threads") {
            None => None,
            Some(toml::Value::Integer(n)) if n > 0 => Some(n as usize),
            Some(v) => {
                return Err(CliError::Usage(format!(
                    "config: threads must be a positive integer, got {v}"
                )))
            }
        };
        for (key, value) in &table {
            if !COMMANDS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config: unknown key or section {key:?}")));
            }
            if !value.is_table() {
                return Err(CliError::Usage(format!("config: {key:?} must be a table")));
            }
        }
        Ok(Self {
            threads,
            sections: table,
        })
    }

    /// Overlay the flags that were given onto the command's config section.
    /// Unknown keys in the section are rejected by `T`'s deserializer.
    pub fn layer<T: Serialize + DeserializeOwned>(&self, command: &str, flags: &T) -> Result<T, CliError> {
        let mut merged = match self.sections.get(command) {
            Some(section) => serde_json::to_value(section).map_err(|e| CliError::Usage(e.to_string()))?,
            None => Value::Object(Default::default()),
        };
        let given = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
        if let (Value::Object(m), Value::Object(g)) = (&mut merged, given) {
            for (k, v) in g {
                if !v.is_null() {
                    m.insert(k, v);
                }
            }
        }
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("[{command}] config: {e}")))
    }
}
