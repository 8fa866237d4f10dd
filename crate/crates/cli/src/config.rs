//! Config files as JSON objects with command-line flags layered on top.
//! A flag may not repeat a key the file already sets.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{read_text, CliError, CliResult};

pub struct Layered {
    pub obj: Map<String, Value>,
    source: Option<String>,
}

impl Layered {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Layered {
                obj: Map::new(),
                source: None,
            });
        };
        let text = read_text(path)?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(obj)) => Ok(Layered {
                obj,
                source: Some(path.display().to_string()),
            }),
            Ok(_) => Err(CliError::at(path, "expected a JSON object")),
            Err(e) => Err(CliError::at(path, e)),
        }
    }

    /// Sets `key` from a flag. `flag` is the spelling reported on conflict.
    pub fn flag(&mut self, key: &str, flag: &str, value: Option<Value>) -> CliResult<()> {
        let Some(value) = value else {
            return Ok(());
        };
        if self.obj.contains_key(key) {
            return Err(CliError::Usage(format!(
                "{flag} duplicates key `{key}` in {}",
                self.source.as_deref().unwrap_or("the config file")
            )));
        }
        self.obj.insert(key.to_string(), value);
        Ok(())
    }

    pub fn take(&mut self, key: &str) -> Option<Value> {
        self.obj.remove(key)
    }

    pub fn into_typed<T: DeserializeOwned>(self, what: &str) -> CliResult<T> {
        serde_json::from_value(Value::Object(self.obj)).map_err(|e| match &self.source {
            Some(s) => CliError::Invalid(format!("{s}: {e}")),
            None => CliError::Invalid(format!("{what}: {e}")),
        })
    }
}

pub fn string(v: Option<impl ToString>) -> Option<Value> {
    v.map(|s| Value::String(s.to_string()))
}

pub fn json<T: serde::Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|x| serde_json::to_value(x).expect("plain data serializes"))
}
