//! Chat-completion probing with retry, content-hash caching and bounded
//! parallelism.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{cache_key, ProbeCache};
use super::{OracleError, Statement};
use crate::labels::{LabelSource, TripletLabel, TripletLabelTable};

pub const SYSTEM_MESSAGE: &str =
    "Evaluate the statement based on your knowledge and respond with True or False.";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub endpoint: String,
    pub model_name: String,
    pub system_message: String,
    pub max_retries: u32,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub cache_path: Option<std::path::PathBuf>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            system_message: SYSTEM_MESSAGE.into(),
            max_retries: 2,
            parallelism: 4,
            timeout_secs: 60,
            temperature: 0.0,
            cache_path: None,
            api_key: None,
        }
    }
}

impl OracleConfig {
    /// Applies ORACLE_ENDPOINT and ORACLE_API_KEY when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(ep) = std::env::var("ORACLE_ENDPOINT") {
            if !ep.is_empty() {
                self.endpoint = ep;
            }
        }
        if let Ok(key) = std::env::var("ORACLE_API_KEY") {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.parallelism == 0 {
            return Err(OracleError::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

pub trait ChatBackend: Sync {
    /// Returns the raw assistant text for a single system + user exchange.
    fn complete(&self, model: &str, system: &str, user: &str) -> Result<String, OracleError>;
}

/// OpenAI-style `/chat/completions` endpoint.
pub struct HttpChatBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    temperature: f64,
}

impl HttpChatBackend {
    pub fn new(cfg: &OracleConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            api_key: cfg.api_key.clone(),
            temperature: cfg.temperature,
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, model: &str, system: &str, user: &str) -> Result<String, OracleError> {
        let body = json!({
            "model": model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| OracleError::Transport(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| OracleError::Transport(format!("response has no message content: {value}")))
    }
}

/// First case-insensitive `true`/`false` token on the first line.
pub fn parse_label(response: &str) -> Option<u8> {
    let first = response.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    first
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|tok| match tok.to_ascii_lowercase().as_str() {
            "true" => Some(1),
            "false" => Some(0),
            _ => None,
        })
}

/// One statement, retried up to `max_retries` extra times on transport
/// failures or unparseable answers. Bypasses the cache.
pub fn query_label(
    statement: &str,
    cfg: &OracleConfig,
    backend: &dyn ChatBackend,
) -> Result<u8, OracleError> {
    let attempts = cfg.max_retries + 1;
    let mut last = OracleError::Transport("no attempt made".into());
    for _ in 0..attempts {
        match backend.complete(&cfg.model_name, &cfg.system_message, statement) {
            Ok(text) => match parse_label(&text) {
                Some(v) => return Ok(v),
                None => {
                    last = OracleError::UnparseableLabel {
                        response: text,
                        attempts,
                    }
                }
            },
            Err(e) => last = e,
        }
    }
    Err(last)
}

pub fn probe_triplet(
    s: &Statement,
    cfg: &OracleConfig,
    backend: &dyn ChatBackend,
    cache: &ProbeCache,
) -> Result<TripletLabel, OracleError> {
    let outcome = probe_batch(std::slice::from_ref(s), cfg, backend, cache);
    match outcome.errors.into_iter().next() {
        Some(f) => Err(f.error),
        None => Ok(*outcome.labels.label(s.triplet_ref).expect("label present")),
    }
}

#[derive(Debug, Clone)]
pub struct ProbeFailure {
    pub triplet: usize,
    pub error: OracleError,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub labels: TripletLabelTable,
    pub errors: Vec<ProbeFailure>,
    pub upstream_requests: usize,
    pub cache_hits: usize,
}

/// Labels every statement. Cached keys are never re-queried, duplicate
/// statements share one request, and at most `cfg.parallelism` requests
/// are in flight.
pub fn probe_batch(
    statements: &[Statement],
    cfg: &OracleConfig,
    backend: &dyn ChatBackend,
    cache: &ProbeCache,
) -> BatchOutcome {
    let keys: Vec<String> = statements
        .iter()
        .map(|s| cache_key(&cfg.model_name, &s.text))
        .collect();

    // unique uncached keys, first-seen order
    let mut pending: Vec<(String, &str)> = Vec::new();
    let mut seen = HashMap::new();
    for (s, k) in statements.iter().zip(&keys) {
        if cache.get(k).is_none() && !seen.contains_key(k) {
            seen.insert(k.clone(), pending.len());
            pending.push((k.clone(), s.text.as_str()));
        }
    }

    let results: Mutex<HashMap<String, Result<u8, OracleError>>> = Mutex::new(HashMap::new());
    let requests = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let workers = cfg.parallelism.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((key, text)) = pending.get(i) else {
                    break;
                };
                let counting = CountingBackend {
                    inner: backend,
                    count: &requests,
                };
                let res = query_label(text, cfg, &counting);
                if let Ok(v) = res {
                    if let Err(e) = cache.record(key, &cfg.model_name, v) {
                        log::warn!("failed to append probe cache: {e}");
                    }
                }
                results.lock().unwrap().insert(key.clone(), res);
            });
        }
    });
    let fresh = results.into_inner().unwrap();

    let mut out = BatchOutcome {
        upstream_requests: requests.into_inner(),
        ..Default::default()
    };
    for (s, k) in statements.iter().zip(&keys) {
        match fresh.get(k) {
            Some(Ok(v)) => out.labels.insert(TripletLabel {
                triplet: s.triplet_ref,
                value: *v,
                source: LabelSource::Llm,
            }),
            Some(Err(e)) => out.errors.push(ProbeFailure {
                triplet: s.triplet_ref,
                error: e.clone(),
            }),
            None => {
                let v = cache.get(k).expect("cached or fresh");
                out.cache_hits += 1;
                out.labels.insert(TripletLabel {
                    triplet: s.triplet_ref,
                    value: v,
                    source: LabelSource::Cache,
                });
            }
        }
    }
    out
}

struct CountingBackend<'a> {
    inner: &'a dyn ChatBackend,
    count: &'a AtomicUsize,
}

impl ChatBackend for CountingBackend<'_> {
    fn complete(&self, model: &str, system: &str, user: &str) -> Result<String, OracleError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(model, system, user)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted<F: Fn(&str) -> Result<String, OracleError> + Sync> {
        f: F,
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        max_in_flight: AtomicUsize,
    }

    impl<F: Fn(&str) -> Result<String, OracleError> + Sync> Scripted<F> {
        fn new(f: F) -> Self {
            Self {
                f,
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                max_in_flight: AtomicUsize::new(0),
            }
        }
    }

    impl<F: Fn(&str) -> Result<String, OracleError> + Sync> ChatBackend for Scripted<F> {
        fn complete(&self, _m: &str, system: &str, user: &str) -> Result<String, OracleError> {
            assert_eq!(system, SYSTEM_MESSAGE);
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.max_in_flight.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            let r = (self.f)(user);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            r
        }
    }

    fn stmt(i: usize, text: &str) -> Statement {
        Statement {
            text: text.into(),
            triplet_ref: i,
            temporal: false,
        }
    }

    #[test]
    fn parse_rule() {
        assert_eq!(parse_label("True"), Some(1));
        assert_eq!(parse_label(" false."), Some(0));
        assert_eq!(parse_label("FALSE\ntrue"), Some(0));
        assert_eq!(parse_label("Answer: TRUE, definitely"), Some(1));
        assert_eq!(parse_label("I am not sure"), None);
        assert_eq!(parse_label("untrue"), None);
        assert_eq!(parse_label("maybe\nTrue"), None);
        assert_eq!(parse_label(""), None);
    }

    #[test]
    fn single_probe_and_retries() {
        let cfg = OracleConfig::default();
        let b = Scripted::new(|_| Ok("True".into()));
        let cache = ProbeCache::in_memory();
        let l = probe_triplet(&stmt(0, "X is the son of Y."), &cfg, &b, &cache).unwrap();
        assert_eq!(l.value, 1);
        assert_eq!(l.source, LabelSource::Llm);
        let l = probe_triplet(&stmt(0, "X is the son of Y."), &cfg, &b, &cache).unwrap();
        assert_eq!(l.source, LabelSource::Cache);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);

        let unsure = Scripted::new(|_| Ok("I am not sure".into()));
        let err = probe_triplet(&stmt(1, "s"), &cfg, &unsure, &cache).unwrap_err();
        assert!(matches!(err, OracleError::UnparseableLabel { attempts: 3, .. }));
        assert_eq!(unsure.calls.load(Ordering::SeqCst), 3);
        // failures are not cached
        assert!(cache.get(&cache_key(&cfg.model_name, "s")).is_none());

        let flaky_count = AtomicUsize::new(0);
        let flaky = Scripted::new(|_| {
            if flaky_count.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(OracleError::Transport("reset".into()))
            } else {
                Ok("false".into())
            }
        });
        assert_eq!(probe_triplet(&stmt(2, "t"), &cfg, &flaky, &cache).unwrap().value, 0);

        let down = Scripted::new(|_| Err(OracleError::Transport("refused".into())));
        assert!(matches!(
            probe_triplet(&stmt(3, "u"), &cfg, &down, &cache),
            Err(OracleError::Transport(_))
        ));
    }

    #[test]
    fn batch_partial_failure_and_order() {
        let cfg = OracleConfig {
            max_retries: 1,
            ..Default::default()
        };
        let b = Scripted::new(|u| {
            if u == "s7" {
                Ok("no idea".into())
            } else if u.ends_with('0') || u.ends_with('2') {
                Ok("False".into())
            } else {
                Ok("True".into())
            }
        });
        let cache = ProbeCache::in_memory();
        let stmts: Vec<_> = (0..10).map(|i| stmt(i, &format!("s{i}"))).collect();
        let out = probe_batch(&stmts, &cfg, &b, &cache);
        assert_eq!(out.labels.len(), 9);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].triplet, 7);
        assert_eq!(out.labels.get(0), Some(0));
        assert_eq!(out.labels.get(1), Some(1));
        assert_eq!(out.labels.get(2), Some(0));
        assert_eq!(out.upstream_requests, 9 + 2);
    }

    #[test]
    fn batch_cache_dedup_and_parallelism() {
        let cfg = OracleConfig {
            parallelism: 3,
            ..Default::default()
        };
        let b = Scripted::new(|_| Ok("true".into()));
        let cache = ProbeCache::in_memory();
        let mut stmts: Vec<_> = (0..20).map(|i| stmt(i, &format!("fact {}", i % 10))).collect();
        stmts.push(stmt(20, "fact 3"));
        let out = probe_batch(&stmts, &cfg, &b, &cache);
        assert_eq!(out.labels.len(), 21);
        assert_eq!(b.calls.load(Ordering::SeqCst), 10);
        assert!(b.max_in_flight.load(Ordering::SeqCst) <= 3);
        assert!(b.max_in_flight.load(Ordering::SeqCst) >= 2);

        let again = probe_batch(&stmts, &cfg, &b, &cache);
        assert_eq!(again.upstream_requests, 0);
        assert_eq!(again.cache_hits, 21);
        assert_eq!(b.calls.load(Ordering::SeqCst), 10);
        let values = |o: &BatchOutcome| o.labels.iter().map(|l| l.value).collect::<Vec<_>>();
        assert_eq!(values(&out), values(&again));
    }
}
