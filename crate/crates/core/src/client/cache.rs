use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Content-addressed response cache, one JSON file per key.
///
/// Writes go through a mutex and land via rename, so readers never see a
/// half-written entry.
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into(), write_lock: Mutex::new(()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::warn!(key, error = %e, "ignoring corrupt cache entry");
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let result = serde_json::to_vec(value)
            .map_err(crate::io::IoError::from)
            .and_then(|bytes| crate::io::write_atomic(&self.path(key), &bytes));
        if let Err(e) = result {
            tracing::warn!(key, error = %e, "cache write failed");
        }
    }
}
