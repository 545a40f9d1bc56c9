//! Append-only on-disk response log with an in-memory index. No eviction.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Cached, Completion};
use crate::Result;

const LOG_FILE: &str = "responses.jsonl";

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completions: Option<Vec<Completion>>,
    ts: u64,
}

pub struct ResponseCache {
    index: RwLock<HashMap<String, Cached>>,
    log: Option<Mutex<File>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            log: None,
            dir: None,
        }
    }

    /// Opens (or creates) the log in `dir` and loads its index. A torn final
    /// line from an interrupted write is skipped.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut index = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                let Ok(entry) = serde_json::from_str::<Entry>(&line) else {
                    log::warn!("skipping unreadable cache line in {}", path.display());
                    continue;
                };
                let value = match (entry.logprobs, entry.completions) {
                    (Some(lp), None) => Cached::Score(lp),
                    (None, Some(c)) => Cached::Complete(c),
                    _ => continue,
                };
                index.insert(entry.key, value);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            index: RwLock::new(index),
            log: Some(Mutex::new(file)),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(super) fn get(&self, key: &str) -> Option<Cached> {
        self.index.read().unwrap().get(key).cloned()
    }

    /// Persists before publishing to the index.
    pub(super) fn put(&self, key: &str, value: &Cached) -> Result<()> {
        if let Some(log) = &self.log {
            let (logprobs, completions) = match value {
                Cached::Score(lp) => (Some(lp.clone()), None),
                Cached::Complete(c) => (None, Some(c.clone())),
            };
            let entry = Entry {
                key: key.to_string(),
                logprobs,
                completions,
                ts: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut file = log.lock().unwrap();
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.index
            .write()
            .unwrap()
            .insert(key.to_string(), value.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, BackendError, Gateway, ScoreRequest};
    use std::sync::Arc;

    struct Fixed;
    impl Backend for Fixed {
        fn score(&self, _: &str, c: &[String]) -> Result<Vec<f64>, BackendError> {
            Ok((0..c.len())
                .map(|i| -0.1 - 0.123456789012345 * i as f64)
                .collect())
        }
    }

    #[test]
    fn persisted_responses_are_byte_identical_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let req = ScoreRequest::new("b", "prompt", &["yes".into(), "no".into(), "x".into()]);
        let first = {
            let gw = Gateway::new(ResponseCache::open(dir.path()).unwrap())
                .with_backend("b", Arc::new(Fixed));
            gw.score(&req).unwrap()
        };
        let gw = Gateway::new(ResponseCache::open(dir.path()).unwrap())
            .with_backend("b", Arc::new(Fixed));
        let second = gw.score(&req).unwrap();
        assert_eq!(
            first
                .logprobs
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
            second
                .logprobs
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        );
        let s = gw.flush_stats()["b"];
        assert_eq!((s.cache_hits, s.backend_calls), (1, 0));
    }

    #[test]
    fn torn_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(LOG_FILE),
            "{\"key\":\"a\",\"logprobs\":[-1.0],\"ts\":0}\n{\"key\":",
        )
        .unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
    }
}
