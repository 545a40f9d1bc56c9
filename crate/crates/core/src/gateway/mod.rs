//! Language-model backend protocol with a persistent response cache,
//! retries with exponential backoff, per-key single-flight deduplication,
//! and usage counters.
//!
//! All scores are natural-log probabilities; nothing in this module converts
//! them to probabilities.

mod cache;
mod http;
mod mock;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::hashing::FieldHasher;
use crate::{Error, Result};

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{mock_score, MatchRule, MockBackend, Noise, Rule, Rulebook};

pub const MAX_CANDIDATES: usize = 32;
pub const MAX_TOP_K: usize = 100;

/// Environment variable naming the cache directory.
pub const CACHE_DIR_ENV: &str = "PWS_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub backend: String,
    pub prompt: String,
    pub candidates: Vec<String>,
}

impl ScoreRequest {
    pub fn new(backend: &str, prompt: impl Into<String>, candidates: &[String]) -> Self {
        Self {
            backend: backend.to_string(),
            prompt: prompt.into(),
            candidates: candidates.to_vec(),
        }
    }

    /// Candidate order is part of the key.
    pub fn cache_key(&self) -> String {
        let mut h = FieldHasher::new();
        h.field("score").field(&self.backend).field(&self.prompt);
        for c in &self.candidates {
            h.field(c);
        }
        h.hex()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub backend: String,
    pub prompt: String,
    pub top_k: usize,
}

impl CompleteRequest {
    pub fn cache_key(&self) -> String {
        FieldHasher::new()
            .field("complete")
            .field(&self.backend)
            .field(&self.prompt)
            .field(self.top_k.to_le_bytes())
            .hex()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 5xx.
    Transient(String),
    /// Not worth retrying.
    Permanent(String),
    /// The backend answered with something that violates the protocol.
    Protocol(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(s) => write!(f, "transient: {s}"),
            BackendError::Permanent(s) => write!(f, "permanent: {s}"),
            BackendError::Protocol(s) => write!(f, "protocol: {s}"),
        }
    }
}

pub trait Backend: Send + Sync {
    /// One log-probability per candidate, in candidate order.
    fn score(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError>;

    fn complete(&self, _prompt: &str, _top_k: usize) -> Result<Vec<Completion>, BackendError> {
        Err(BackendError::Permanent(
            "completion is not supported".into(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendStats {
    pub queries: u64,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub failures: u64,
}

/// Declarative backend configuration, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock { rulebook: String },
    Http { url: String, model: String },
}

impl BackendConfig {
    /// Relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendConfig::Mock { rulebook } => {
                Arc::new(MockBackend::new(Rulebook::load(base_dir.join(rulebook))?))
            }
            BackendConfig::Http { url, model } => Arc::new(HttpBackend::new(url, model)),
        })
    }
}

#[derive(Debug, Clone)]
enum Cached {
    Score(Vec<f64>),
    Complete(Vec<Completion>),
}

pub struct Gateway {
    backends: BTreeMap<String, Arc<dyn Backend>>,
    cache: ResponseCache,
    retry: RetryPolicy,
    stats: Mutex<BTreeMap<String, BackendStats>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(cache: ResponseCache) -> Self {
        Self {
            backends: BTreeMap::new(),
            cache,
            retry: RetryPolicy::default(),
            stats: Mutex::new(BTreeMap::new()),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    /// In-memory cache only.
    pub fn ephemeral() -> Self {
        Self::new(ResponseCache::in_memory())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        let id = id.into();
        self.stats.lock().unwrap().entry(id.clone()).or_default();
        self.backends.insert(id, backend);
    }

    pub fn with_backend(mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.register(id, backend);
        self
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn backend(&self, id: &str) -> Result<&Arc<dyn Backend>> {
        self.backends
            .get(id)
            .ok_or_else(|| Error::Config(format!("backend `{id}` is not registered")))
    }

    fn bump(&self, id: &str, f: impl FnOnce(&mut BackendStats)) {
        f(self
            .stats
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_default());
    }

    /// Snapshot of the per-backend counters. Counters are never reset, so
    /// successive snapshots are monotone.
    pub fn flush_stats(&self) -> BTreeMap<String, BackendStats> {
        self.stats.lock().unwrap().clone()
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        if req.candidates.is_empty() || req.candidates.len() > MAX_CANDIDATES {
            return Err(Error::Contract(format!(
                "score request needs 1..={MAX_CANDIDATES} candidates, got {}",
                req.candidates.len()
            )));
        }
        let backend = self.backend(&req.backend)?;
        let arity = req.candidates.len();
        let out = self.cached_call(&req.backend, req.cache_key(), || {
            let lp = backend.score(&req.prompt, &req.candidates)?;
            if lp.len() != arity {
                return Err(BackendError::Protocol(format!(
                    "{} logprobs for {arity} candidates",
                    lp.len()
                )));
            }
            if let Some(bad) = lp.iter().find(|x| !x.is_finite()) {
                return Err(BackendError::Protocol(format!("non-finite logprob {bad}")));
            }
            Ok(Cached::Score(lp))
        })?;
        match out {
            Cached::Score(logprobs) => Ok(ScoreResponse { logprobs }),
            Cached::Complete(_) => unreachable!("score key holds completions"),
        }
    }

    pub fn complete(&self, req: &CompleteRequest) -> Result<Vec<Completion>> {
        if req.top_k == 0 || req.top_k > MAX_TOP_K {
            return Err(Error::Contract(format!(
                "top_k must lie in 1..={MAX_TOP_K}, got {}",
                req.top_k
            )));
        }
        let backend = self.backend(&req.backend)?;
        let top_k = req.top_k;
        let out = self.cached_call(&req.backend, req.cache_key(), || {
            let comps = backend.complete(&req.prompt, top_k)?;
            if comps.is_empty() || comps.len() > top_k {
                return Err(BackendError::Protocol(format!(
                    "{} completions for top_k {top_k}",
                    comps.len()
                )));
            }
            if comps.iter().any(|c| !c.logprob.is_finite()) {
                return Err(BackendError::Protocol(
                    "non-finite completion logprob".into(),
                ));
            }
            Ok(Cached::Complete(comps))
        })?;
        match out {
            Cached::Complete(c) => Ok(c),
            Cached::Score(_) => unreachable!("completion key holds scores"),
        }
    }

    fn cached_call(
        &self,
        backend_id: &str,
        key: String,
        call: impl Fn() -> Result<Cached, BackendError>,
    ) -> Result<Cached> {
        self.bump(backend_id, |s| s.queries += 1);
        if let Some(hit) = self.cache.get(&key) {
            self.bump(backend_id, |s| s.cache_hits += 1);
            return Ok(hit);
        }

        // Single flight: concurrent misses on one key serialize here, and
        // all but the first find the response already cached.
        let slot = self
            .inflight
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = slot.lock().unwrap();
        if let Some(hit) = self.cache.get(&key) {
            self.bump(backend_id, |s| s.cache_hits += 1);
            return Ok(hit);
        }

        let result = self.call_with_retry(backend_id, &call);
        let result = match result {
            Ok(value) => {
                self.cache.put(&key, &value)?;
                Ok(value)
            }
            Err(e) => {
                self.bump(backend_id, |s| s.failures += 1);
                Err(e)
            }
        };
        self.inflight.lock().unwrap().remove(&key);
        result
    }

    fn call_with_retry(
        &self,
        backend_id: &str,
        call: &impl Fn() -> Result<Cached, BackendError>,
    ) -> Result<Cached> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.delay(attempt - 1);
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
            }
            self.bump(backend_id, |s| s.backend_calls += 1);
            match call() {
                Ok(v) => return Ok(v),
                Err(BackendError::Transient(msg)) => {
                    log::warn!(
                        "backend `{backend_id}` attempt {} failed: {msg}",
                        attempt + 1
                    );
                    last = msg;
                }
                Err(BackendError::Permanent(msg)) => {
                    return Err(Error::Backend {
                        backend: backend_id.to_string(),
                        reason: msg,
                    })
                }
                Err(BackendError::Protocol(msg)) => {
                    return Err(Error::Protocol {
                        backend: backend_id.to_string(),
                        reason: msg,
                    })
                }
            }
        }
        Err(Error::Backend {
            backend: backend_id.to_string(),
            reason: format!("gave up after {attempts} attempts: {last}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
        reply: Box<dyn Fn(&str, &[String]) -> Result<Vec<f64>, BackendError> + Send + Sync>,
    }

    impl Counting {
        fn new(
            reply: impl Fn(&str, &[String]) -> Result<Vec<f64>, BackendError> + Send + Sync + 'static,
        ) -> Arc<Self> {
            Arc::new(Self {
                calls: AtomicUsize::new(0),
                reply: Box::new(reply),
            })
        }
    }

    impl Backend for Counting {
        fn score(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            (self.reply)(prompt, candidates)
        }
    }

    fn yes_no() -> Vec<String> {
        vec!["yes".into(), "no".into()]
    }

    fn uniform(_: &str, c: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(vec![(0.5f64).ln(); c.len()])
    }

    #[test]
    fn fresh_gateway_has_zero_stats() {
        let gw = Gateway::ephemeral().with_backend("b", Counting::new(uniform));
        assert_eq!(gw.flush_stats()["b"], BackendStats::default());
    }

    #[test]
    fn identical_request_is_served_from_cache() {
        let backend = Counting::new(uniform);
        let gw = Gateway::ephemeral().with_backend("b", backend.clone());
        let req = ScoreRequest::new("b", "p", &yes_no());
        let a = gw.score(&req).unwrap();
        let b = gw.score(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn candidate_order_changes_the_key() {
        let backend = Counting::new(uniform);
        let gw = Gateway::ephemeral().with_backend("b", backend.clone());
        gw.score(&ScoreRequest::new("b", "p", &yes_no())).unwrap();
        gw.score(&ScoreRequest::new("b", "p", &["no".into(), "yes".into()]))
            .unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn arity_mismatch_is_a_protocol_error() {
        let gw = Gateway::ephemeral()
            .with_backend("b", Counting::new(|_, _| Ok(vec![-0.1, -0.2, -0.3])));
        let err = gw
            .score(&ScoreRequest::new("b", "p", &yes_no()))
            .unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }), "{err}");
        let gw = Gateway::ephemeral()
            .with_backend("b", Counting::new(|_, _| Ok(vec![f64::NEG_INFINITY, 0.0])));
        assert!(matches!(
            gw.score(&ScoreRequest::new("b", "p", &yes_no())),
            Err(Error::Protocol { .. })
        ));
    }

    #[test]
    fn unique_and_repeated_counts() {
        let gw = Gateway::ephemeral().with_backend("b", Counting::new(uniform));
        for i in 0..10 {
            gw.score(&ScoreRequest::new("b", format!("p{i}"), &yes_no()))
                .unwrap();
        }
        for i in 0..5 {
            gw.score(&ScoreRequest::new("b", format!("p{i}"), &yes_no()))
                .unwrap();
        }
        let s = gw.flush_stats()["b"];
        assert_eq!(
            (s.queries, s.cache_hits, s.backend_calls, s.failures),
            (15, 5, 10, 0)
        );
    }

    #[test]
    fn retry_budget_is_respected() {
        // Oracle: an instrumented backend that always fails transiently is
        // called exactly `max_attempts` times.
        for budget in 1..=5u32 {
            let backend = Counting::new(|_, _| Err(BackendError::Transient("down".into())));
            let gw = Gateway::ephemeral()
                .with_retry(RetryPolicy::immediate(budget))
                .with_backend("b", backend.clone());
            let err = gw
                .score(&ScoreRequest::new("b", "p", &yes_no()))
                .unwrap_err();
            assert!(err.is_backend());
            assert_eq!(backend.calls.load(Ordering::SeqCst), budget as usize);
            let s = gw.flush_stats()["b"];
            assert_eq!((s.failures, s.backend_calls), (1, u64::from(budget)));
        }
    }

    #[test]
    fn transient_failure_then_success() {
        let n = Arc::new(AtomicUsize::new(0));
        let n2 = n.clone();
        let backend = Counting::new(move |_, c| {
            if n2.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transient("flaky".into()))
            } else {
                uniform("", c)
            }
        });
        let gw = Gateway::ephemeral()
            .with_retry(RetryPolicy::immediate(3))
            .with_backend("b", backend);
        assert!(gw.score(&ScoreRequest::new("b", "p", &yes_no())).is_ok());
        assert_eq!(gw.flush_stats()["b"].backend_calls, 3);
    }

    #[test]
    fn permanent_failure_is_not_retried() {
        let backend = Counting::new(|_, _| Err(BackendError::Permanent("bad request".into())));
        let gw = Gateway::ephemeral()
            .with_retry(RetryPolicy::immediate(5))
            .with_backend("b", backend.clone());
        assert!(gw.score(&ScoreRequest::new("b", "p", &yes_no())).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrent_identical_misses_call_backend_once() {
        let backend = Counting::new(|_, c| {
            thread::sleep(Duration::from_millis(20));
            uniform("", c)
        });
        let gw = Arc::new(Gateway::ephemeral().with_backend("b", backend.clone()));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gw = gw.clone();
                thread::spawn(move || {
                    gw.score(&ScoreRequest::new("b", "same", &yes_no()))
                        .unwrap()
                })
            })
            .collect();
        let outs: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(outs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        let s = gw.flush_stats()["b"];
        assert_eq!((s.queries, s.cache_hits), (8, 7));
    }

    #[test]
    fn unknown_backend_and_bad_candidates() {
        let gw = Gateway::ephemeral().with_backend("b", Counting::new(uniform));
        assert!(matches!(
            gw.score(&ScoreRequest::new("nope", "p", &yes_no())),
            Err(Error::Config(_))
        ));
        assert!(gw.score(&ScoreRequest::new("b", "p", &[])).is_err());
        let many: Vec<String> = (0..33).map(|i| i.to_string()).collect();
        assert!(gw.score(&ScoreRequest::new("b", "p", &many)).is_err());
    }

    #[test]
    fn failing_backend_does_not_affect_another() {
        let gw = Gateway::ephemeral()
            .with_retry(RetryPolicy::immediate(2))
            .with_backend(
                "down",
                Counting::new(|_, _| Err(BackendError::Transient("x".into()))),
            )
            .with_backend("up", Counting::new(uniform));
        assert!(gw
            .score(&ScoreRequest::new("down", "p", &yes_no()))
            .is_err());
        assert!(gw.score(&ScoreRequest::new("up", "p", &yes_no())).is_ok());
        let stats = gw.flush_stats();
        assert_eq!(stats["up"].failures, 0);
        assert_eq!(stats["down"].failures, 1);
    }
}
