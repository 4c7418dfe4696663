use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatClient, ChatRequest};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    model: String,
    response: String,
}

/// Content-addressed response cache in front of any client.
///
/// Entries live at `<dir>/<d[0..2]>/<digest>.json`. Concurrent callers for the
/// same digest are serialized so the inner client sees at most one call.
pub struct CachedClient<C> {
    inner: C,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<C: ChatClient> CachedClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            inner,
            dir,
            locks: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{digest}.json"))
    }

    fn key_lock(&self, digest: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(digest.to_owned()).or_default().clone()
    }

    fn read_entry(path: &Path) -> Option<CacheEntry> {
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn write_entry(path: &Path, entry: &CacheEntry) -> Result<()> {
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let bytes = serde_json::to_vec(entry).expect("cache entry serializes");
            file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl<C: ChatClient> ChatClient for CachedClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let digest = request.digest()?;
        let path = self.entry_path(&digest);
        let lock = self.key_lock(&digest);
        let _guard = lock.lock().expect("cache key lock poisoned");
        if let Some(entry) = Self::read_entry(&path) {
            if entry.digest == digest {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(entry.response);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.complete(request)?;
        Self::write_entry(
            &path,
            &CacheEntry {
                digest,
                model: request.model.clone(),
                response: response.clone(),
            },
        )?;
        Ok(response)
    }

    fn model(&self) -> &str {
        self.inner.model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_clients::ChatTurn;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        calls: AtomicUsize,
    }

    impl ChatClient for Counting {
        fn complete(&self, request: &ChatRequest) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{}#{n}", request.last_user_text()))
        }
        fn model(&self) -> &str {
            "counting"
        }
    }

    fn counting() -> Counting {
        Counting {
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let client = CachedClient::new(counting(), dir.path()).unwrap();
        let req = ChatRequest::new("counting", vec![ChatTurn::user("q")]);
        let first = client.complete(&req).unwrap();
        let second = client.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(client.inner().calls.load(Ordering::SeqCst), 1);
        assert_eq!((client.hits(), client.misses()), (1, 1));
    }

    #[test]
    fn cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::new("counting", vec![ChatTurn::user("persist")]);
        let first = CachedClient::new(counting(), dir.path())
            .unwrap()
            .complete(&req)
            .unwrap();
        let reopened = CachedClient::new(counting(), dir.path()).unwrap();
        assert_eq!(reopened.complete(&req).unwrap(), first);
        assert_eq!(reopened.inner().calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn attempts_are_cached_separately() {
        let dir = tempfile::tempdir().unwrap();
        let client = CachedClient::new(counting(), dir.path()).unwrap();
        let req = ChatRequest::new("counting", vec![ChatTurn::user("q")]);
        let a = client.complete(&req).unwrap();
        let b = client.complete(&req.clone().with_attempt(1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn concurrent_identical_requests_call_inner_once() {
        let dir = tempfile::tempdir().unwrap();
        let client = Arc::new(CachedClient::new(counting(), dir.path()).unwrap());
        let req = ChatRequest::new("counting", vec![ChatTurn::user("same")]);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let client = Arc::clone(&client);
                let req = req.clone();
                std::thread::spawn(move || client.complete(&req).unwrap())
            })
            .collect();
        let outs: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(outs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(client.inner().calls.load(Ordering::SeqCst), 1);
    }
}
