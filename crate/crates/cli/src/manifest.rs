use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: Value,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// SHA-256 of the compact JSON with object keys sorted at every level.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(&canonicalize(config)).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: Value,
        seed: u64,
        started_unix: u64,
        artifacts: &[PathBuf],
    ) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            started_unix,
            finished_unix: unix_now(),
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": 0.5}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": 0.5, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c: Value = serde_json::from_str(r#"{"a": {"x": 0.5, "y": [2, 1]}, "b": 1}"#).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn hash_is_sha256_of_sorted_compact_json() {
        let v: Value = serde_json::from_str(r#"{"z":1,"a":2}"#).unwrap();
        // Digest of the text {"a":2,"z":1}.
        let expected = hex::encode(Sha256::digest(br#"{"a":2,"z":1}"#));
        assert_eq!(config_hash(&v), expected);
        assert_eq!(config_hash(&v).len(), 64);
    }
}
