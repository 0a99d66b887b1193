//! On-disk JSON cache for remote responses.
//!
//! Layout: `<dir>/<namespace>/<sha256(key)>.json`. Writes go to a temporary
//! file in the same directory and are renamed into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CacheError<E> {
    #[error("cache miss for {namespace}/{key} in offline mode")]
    OfflineMiss { namespace: String, key: String },
    #[error("cache I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Fetch(E),
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
    offline: bool,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>, offline: bool) -> Self {
        DiskCache {
            dir: dir.into(),
            offline,
        }
    }

    pub fn is_offline(&self) -> bool {
        self.offline
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, namespace: &str, key: &str) -> PathBuf {
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.dir.join(namespace).join(format!("{digest}.json"))
    }

    /// Cached value, or None on a miss or an unreadable entry.
    pub fn get<T: DeserializeOwned>(&self, namespace: &str, key: &str) -> Option<T> {
        let bytes = fs::read(self.path_for(namespace, key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put<T: Serialize>(&self, namespace: &str, key: &str, value: &T) -> io::Result<()> {
        let path = self.path_for(namespace, key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(
            ".{}.{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("entry"),
            std::process::id()
        ));
        fs::write(&tmp, serde_json::to_vec(value).map_err(io::Error::other)?)?;
        fs::rename(&tmp, &path)
    }

    /// Returns the cached value, or calls `fetch` and stores its result.
    /// In offline mode a miss is an error and `fetch` is never called.
    pub fn get_or_fetch<T, E, F>(&self, namespace: &str, key: &str, fetch: F) -> Result<T, CacheError<E>>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, E>,
    {
        if let Some(v) = self.get(namespace, key) {
            return Ok(v);
        }
        if self.offline {
            return Err(CacheError::OfflineMiss {
                namespace: namespace.to_string(),
                key: key.to_string(),
            });
        }
        let value = fetch().map_err(CacheError::Fetch)?;
        self.put(namespace, key, &value)?;
        Ok(value)
    }
}
