//! Content-addressed completion cache: one JSON file per request fingerprint.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::digest::sha256_hex;
use crate::providers::ModelResponse;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache entry {fingerprint} is corrupt: {reason}")]
    CacheCorrupt { fingerprint: String, reason: String },
    #[error("`{0}` is not a hex fingerprint")]
    BadFingerprint(String),
    #[error("cache I/O failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    fingerprint: String,
    /// SHA-256 of the serialised `response`.
    digest: String,
    response: ModelResponse,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, fingerprint: &str) -> Result<PathBuf, CacheError> {
        if fingerprint.is_empty() || !fingerprint.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(CacheError::BadFingerprint(fingerprint.to_string()));
        }
        Ok(self.dir.join(format!("{fingerprint}.json")))
    }

    /// Strict lookup: corrupt entries surface as errors.
    pub fn lookup(&self, fingerprint: &str) -> Result<Option<ModelResponse>, CacheError> {
        let path = self.path(fingerprint)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| CacheError::CacheCorrupt {
            fingerprint: fingerprint.to_string(),
            reason,
        };
        let entry: Entry = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if entry.fingerprint != fingerprint || entry.response.request_fingerprint != fingerprint {
            return Err(corrupt("fingerprint mismatch".into()));
        }
        let digest = sha256_hex(serde_json::to_vec(&entry.response).expect("response serialises"));
        if digest != entry.digest {
            return Err(corrupt("digest mismatch".into()));
        }
        let mut response = entry.response;
        response.from_cache = true;
        Ok(Some(response))
    }

    /// Lookup that treats corrupt entries as misses.
    pub fn get(&self, fingerprint: &str) -> Option<ModelResponse> {
        match self.lookup(fingerprint) {
            Ok(hit) => hit,
            Err(e) => {
                warn!(error = %e, "ignoring unusable cache entry");
                None
            }
        }
    }

    /// Atomically stores `response` (write to a temp file, then rename).
    pub fn put(&self, fingerprint: &str, response: &ModelResponse) -> Result<(), CacheError> {
        let path = self.path(fingerprint)?;
        let mut response = response.clone();
        response.from_cache = false;
        let digest = sha256_hex(serde_json::to_vec(&response).expect("response serialises"));
        let entry = Entry {
            fingerprint: fingerprint.to_string(),
            digest,
            response,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer(&mut tmp, &entry).map_err(io::Error::from)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| CacheError::Io(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FinishReason;

    fn response(fp: &str) -> ModelResponse {
        ModelResponse {
            text: "The answer is B.".into(),
            finish_reason: FinishReason::Stop,
            prompt_tokens: 10,
            completion_tokens: 4,
            latency_ms: 12,
            from_cache: false,
            request_fingerprint: fp.into(),
            attempts: 2,
        }
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let fp = "abc123";
        assert!(cache.get(fp).is_none());
        cache.put(fp, &response(fp)).unwrap();
        let hit = cache.get(fp).unwrap();
        assert!(hit.from_cache);
        assert_eq!(ModelResponse { from_cache: false, ..hit }, response(fp));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn tampered_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let fp = "deadbeef";
        cache.put(fp, &response(fp)).unwrap();
        let path = dir.path().join("deadbeef.json");
        let text = fs::read_to_string(&path).unwrap().replace("answer is B", "answer is C");
        fs::write(&path, text).unwrap();
        assert!(matches!(cache.lookup(fp), Err(CacheError::CacheCorrupt { .. })));
        assert!(cache.get(fp).is_none());

        fs::write(&path, "{\"trunc").unwrap();
        assert!(cache.get(fp).is_none());
    }

    #[test]
    fn rejects_path_like_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(matches!(cache.lookup("../x"), Err(CacheError::BadFingerprint(_))));
    }
}
