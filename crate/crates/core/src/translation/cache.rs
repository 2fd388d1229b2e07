//! Persistent translation cache: an append-only JSON-lines ledger keyed by
//! engine id and the SHA-256 of the source text.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{EngineError, TranslationEngine};
use crate::error::{Error, Result};

const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheRecord {
    v: u32,
    engine: String,
    key: String,
    source: String,
    target: String,
}

pub fn text_key(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

type Key = (String, String);

/// Many concurrent readers, one writer. New entries are buffered and
/// appended in sorted order by [`TranslationCache::flush`], so the file
/// contents do not depend on request scheduling.
#[derive(Debug, Default)]
pub struct TranslationCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, String>>,
    pending: Mutex<BTreeMap<Key, CacheRecord>>,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        TranslationCache::default()
    }

    /// Opens (or starts) the ledger at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                if rec.v != CACHE_VERSION || rec.key != text_key(&rec.source) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: "bad cache record version or key".into(),
                    });
                }
                entries.entry((rec.engine, rec.key)).or_insert(rec.target);
            }
        }
        Ok(TranslationCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            pending: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn get(&self, engine: &str, source: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache poisoned")
            .get(&(engine.to_string(), text_key(source)))
            .cloned()
    }

    /// Stores a translation unless one is already present; the first value wins.
    pub fn insert(&self, engine: &str, source: &str, target: &str) {
        let key = (engine.to_string(), text_key(source));
        let mut entries = self.entries.write().expect("cache poisoned");
        if entries.contains_key(&key) {
            return;
        }
        entries.insert(key.clone(), target.to_string());
        let rec = CacheRecord {
            v: CACHE_VERSION,
            engine: key.0.clone(),
            key: key.1.clone(),
            source: source.to_string(),
            target: target.to_string(),
        };
        self.pending.lock().expect("cache poisoned").insert(key, rec);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct engine ids present in the cache, sorted.
    pub fn engine_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .read()
            .expect("cache poisoned")
            .keys()
            .map(|(e, _)| e.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Appends buffered entries to the ledger file. Returns how many were written.
    pub fn flush(&self) -> Result<usize> {
        let mut pending = self.pending.lock().expect("cache poisoned");
        let Some(path) = &self.path else {
            pending.clear();
            return Ok(0);
        };
        if pending.is_empty() {
            return Ok(0);
        }
        let mut out = String::new();
        for rec in pending.values() {
            out.push_str(&serde_json::to_string(rec).map_err(|e| Error::json("cache record", e))?);
            out.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        let n = pending.len();
        pending.clear();
        Ok(n)
    }
}

/// Serves translations from a cache, falling back to `inner` on a miss.
/// Without an inner engine every miss is an error.
pub struct CachedEngine<'a> {
    id: String,
    languages: (String, String),
    inner: Option<&'a dyn TranslationEngine>,
    cache: &'a TranslationCache,
}

impl<'a> CachedEngine<'a> {
    pub fn new(inner: &'a dyn TranslationEngine, cache: &'a TranslationCache) -> Self {
        let (s, t) = inner.languages();
        CachedEngine {
            id: inner.id().to_string(),
            languages: (s.to_string(), t.to_string()),
            inner: Some(inner),
            cache,
        }
    }

    pub fn cache_only(id: &str, languages: (&str, &str), cache: &'a TranslationCache) -> Self {
        CachedEngine {
            id: id.to_string(),
            languages: (languages.0.to_string(), languages.1.to_string()),
            inner: None,
            cache,
        }
    }
}

impl TranslationEngine for CachedEngine<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn languages(&self) -> (&str, &str) {
        (&self.languages.0, &self.languages.1)
    }

    fn translate(&self, text: &str) -> Result<String, EngineError> {
        if let Some(hit) = self.cache.get(&self.id, text) {
            return Ok(hit);
        }
        let inner = self.inner.ok_or_else(|| EngineError::CacheMiss {
            engine: self.id.clone(),
            request: text.to_string(),
        })?;
        let out = inner.translate(text)?;
        self.cache.insert(&self.id, text, &out);
        Ok(out)
    }
}
