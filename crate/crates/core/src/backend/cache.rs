use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionKey};

/// One recorded completion. Also the on-disk format of a cache entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub completion: String,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One JSON file per digest under a directory. Writes go to a temporary file
/// in the same directory and are renamed into place.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(DiskCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CompletionKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }

    pub fn get(&self, key: &CompletionKey) -> Result<Option<String>, BackendError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let entry: TranscriptEntry = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        if entry.digest != key.as_str() {
            return Err(io_err(&path, "digest does not match file name"));
        }
        Ok(Some(entry.completion))
    }

    pub fn put(&self, key: &CompletionKey, completion: &str) -> Result<(), BackendError> {
        let path = self.path_for(key);
        let entry = TranscriptEntry {
            digest: key.as_str().to_string(),
            completion: completion.to_string(),
        };
        let mut body = serde_json::to_string_pretty(&entry).expect("entry serializes");
        body.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        tmp.write_all(body.as_bytes()).map_err(|e| io_err(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<TranscriptEntry>, BackendError> {
        let mut out = Vec::new();
        for item in fs::read_dir(&self.dir).map_err(|e| io_err(&self.dir, e))? {
            let path = item.map_err(|e| io_err(&self.dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            out.push(serde_json::from_str(&text).map_err(|e| io_err(&path, e))?);
        }
        out.sort_by(|a: &TranscriptEntry, b| a.digest.cmp(&b.digest));
        Ok(out)
    }
}

/// Serves completions from a [`DiskCache`] and fills it on misses.
pub struct CachedBackend<B> {
    inner: B,
    cache: DiskCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: DiskCache) -> Self {
        CachedBackend {
            inner,
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Requests forwarded to the inner backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let key = CompletionKey::for_backend(&self.inner, prompt);
        if let Some(hit) = self.cache.get(&key)? {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let completion = self.inner.complete(prompt)?;
        self.cache.put(&key, &completion)?;
        Ok(completion)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }
}

/// Records every successful completion for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<BTreeMap<String, String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    /// Entries sorted by digest.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log
            .lock()
            .expect("transcript lock poisoned")
            .iter()
            .map(|(digest, completion)| TranscriptEntry {
                digest: digest.clone(),
                completion: completion.clone(),
            })
            .collect()
    }

    pub fn record_transcript(&self, path: &Path) -> Result<usize, BackendError> {
        let entries = self.transcript();
        write_transcript(path, &entries)?;
        Ok(entries.len())
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let completion = self.inner.complete(prompt)?;
        let key = CompletionKey::for_backend(&self.inner, prompt);
        self.log
            .lock()
            .expect("transcript lock poisoned")
            .insert(key.as_str().to_string(), completion.clone());
        Ok(completion)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }
}

/// Writes a transcript as a JSON array of `{"digest", "completion"}`.
pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<(), BackendError> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.digest.cmp(&b.digest));
    sorted.dedup_by(|a, b| a.digest == b.digest);
    let mut body = serde_json::to_string_pretty(&sorted).expect("transcript serializes");
    body.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, body).map_err(|e| io_err(path, e))
}

/// Reads a transcript file, or every entry of a cache directory.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, BackendError> {
    if path.is_dir() {
        return DiskCache::open(path)?.entries();
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}
