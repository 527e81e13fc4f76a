//! Append-only probe cache: one JSON record per line, keyed by a SHA-256 of
//! (model, statement). Later records for a key overwrite earlier ones on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub hash: String,
    pub model: String,
    pub label: u8,
    pub timestamp: u64,
}

pub fn cache_key(model: &str, statement: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(statement.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct ProbeCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, u8>>,
    file: Mutex<Option<File>>,
}

impl ProbeCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Opens (or creates) the cache file and loads its records.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut torn_tail = false;
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            torn_tail = !text.is_empty() && !text.ends_with('\n');
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from a crash is skipped rather than fatal.
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(rec) => {
                        entries.insert(rec.hash, rec.label);
                    }
                    Err(e) => log::warn!("{}:{}: skipping bad cache record: {e}", path.display(), n + 1),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if torn_tail {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<u8> {
        self.entries.lock().unwrap().get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&self, key: &str, model: &str, label: u8) -> Result<()> {
        self.entries.lock().unwrap().insert(key.to_string(), label);
        let mut guard = self.file.lock().unwrap();
        if let Some(f) = guard.as_mut() {
            let rec = CacheRecord {
                hash: key.to_string(),
                model: model.to_string(),
                label,
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
