//! Run manifests: what went into a run, hashed so that every output can
//! name the configuration that produced it.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration.
    pub config_hash: String,
    /// Input label → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub tokenizer_id: Option<String>,
    pub thresholds: BTreeMap<String, Value>,
    pub coverage: Option<f64>,
    /// Anything else that changes results (scorer id, word rule, ...).
    pub settings: BTreeMap<String, Value>,
    /// Output file → SHA-256; not part of the hash.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the epoch; not part of the hash.
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started_at: Some(now()),
            ..Self::default()
        }
    }

    /// Hash over everything except timestamps and outputs.
    pub fn hash(&self) -> String {
        let hashed = RunManifest {
            outputs: BTreeMap::new(),
            started_at: None,
            finished_at: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&hashed).expect("manifest serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn add_input(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.insert(label.to_string(), digest);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(now());
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        value["manifest_hash"] = Value::String(self.hash());
        serde_json::to_string_pretty(&value).expect("manifest serializes") + "\n"
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `# manifest=<hash>` followed by the CSV body.
pub fn stamp_csv(body: &str, hash: &str) -> String {
    format!("# manifest={hash}\n{body}")
}

/// The hash from a stamped CSV's first line.
pub fn read_stamp(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("# manifest=")
}
