//! Chat-completion and embedding access behind one gateway.
//!
//! The gateway owns retry with exponential backoff, a prompt size check,
//! a concurrency limiter and token accounting. Backends are pluggable:
//! an OpenAI-compatible HTTP client for live runs and deterministic mocks
//! for tests.

pub mod contract;
pub mod hashing;
pub mod mock;
pub mod openai;

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use contract::{parse_answer, parse_strict_json, ContractError, JsonContract, Record, ValueKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.7,
            max_tokens: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub decoding: Decoding,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Rate limits, timeouts and 5xx responses; retried.
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("prompt of ~{tokens} tokens exceeds the budget of {budget}")]
    OverBudget { tokens: usize, budget: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding for input {0} has zero norm or non-finite values")]
    DegenerateEmbedding(usize),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Retry schedule: waits `base * 2^i` scaled by a uniform jitter factor in
/// `[1 - jitter, 1 + jitter]` before retry `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay_ms: u64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 1000,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: usize) -> Duration {
        let base = self.base_delay_ms as f64 * 2f64.powi(retry as i32);
        let factor = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_millis((base * factor).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub model_id: String,
    pub decoding: Decoding,
    pub retry: RetryPolicy,
    /// Prompt budget in approximate tokens (characters / 4, rounded up).
    pub context_budget_tokens: usize,
    pub max_concurrency: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model_id: "mock".to_string(),
            decoding: Decoding::default(),
            retry: RetryPolicy::default(),
            context_budget_tokens: 32_000,
            max_concurrency: 4,
        }
    }
}

pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Hex SHA-256 of a prompt; keys mock fixtures and lineage records.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    config: GatewayConfig,
    limiter: Limiter,
    usage: Mutex<Usage>,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
    sleeper: Sleeper,
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn EmbeddingBackend>, config: GatewayConfig) -> Self {
        let limiter = Limiter::new(config.max_concurrency);
        Gateway {
            chat,
            embedder,
            config,
            limiter,
            usage: Mutex::new(Usage::default()),
            embed_cache: Mutex::new(HashMap::new()),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces the backoff sleep (tests record delays instead of waiting).
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn usage(&self) -> Usage {
        *self.usage.lock().expect("usage poisoned")
    }

    pub fn request(&self, prompt: &str) -> ChatRequest {
        ChatRequest {
            prompt: prompt.to_string(),
            decoding: self.config.decoding.clone(),
            model_id: self.config.model_id.clone(),
        }
    }

    /// Sends a prompt with the configured decoding settings.
    pub fn chat(&self, prompt: &str) -> Result<String, GatewayError> {
        self.chat_request(&self.request(prompt)).map(|r| r.text)
    }

    pub fn chat_request(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !(request.decoding.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("negative temperature".into()));
        }
        let tokens = approx_tokens(&request.prompt);
        if tokens > self.config.context_budget_tokens {
            return Err(GatewayError::OverBudget {
                tokens,
                budget: self.config.context_budget_tokens,
            });
        }
        let reply = self.with_retries(|| self.chat.complete(request))?;
        if let Some(u) = reply.usage {
            let mut total = self.usage.lock().expect("usage poisoned");
            total.prompt_tokens += u.prompt_tokens;
            total.completion_tokens += u.completion_tokens;
        }
        Ok(reply)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, GatewayError> {
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                call()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(BackendError::Auth(m)) => return Err(GatewayError::Auth(m)),
                Err(BackendError::Fatal(m)) => return Err(GatewayError::Backend(m)),
                Err(BackendError::Transient(m)) => {
                    if retry >= self.config.retry.max_retries {
                        return Err(GatewayError::Exhausted {
                            attempts: retry + 1,
                            last: m,
                        });
                    }
                    log::warn!("transient backend failure (retry {}): {m}", retry + 1);
                    (self.sleeper)(self.config.retry.delay(retry));
                    retry += 1;
                }
            }
        }
    }

    /// One vector per input, in input order. Results are cached by text.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("nothing to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("input {i} is empty")));
        }
        let missing: Vec<String> = {
            let cache = self.embed_cache.lock().expect("cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.with_retries(|| self.embedder.embed(&missing))?;
            if vectors.len() != missing.len() {
                return Err(GatewayError::Backend(format!(
                    "backend returned {} vectors for {} inputs",
                    vectors.len(),
                    missing.len()
                )));
            }
            let mut cache = self.embed_cache.lock().expect("cache poisoned");
            for (t, v) in missing.into_iter().zip(vectors) {
                cache.insert(t, v);
            }
        }
        let cache = self.embed_cache.lock().expect("cache poisoned");
        let model_id = self.embedder.model_id().to_string();
        let out: Vec<Embedding> = texts
            .iter()
            .map(|t| Embedding {
                values: cache[t].clone(),
                model_id: model_id.clone(),
            })
            .collect();
        let dim = out[0].dim();
        for (i, e) in out.iter().enumerate() {
            if e.dim() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    got: e.dim(),
                });
            }
            if dim == 0 || e.values.iter().any(|x| !x.is_finite()) || crate::vector::norm(&e.values) == 0.0 {
                return Err(GatewayError::DegenerateEmbedding(i));
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, GatewayError> {
        self.embed(&[text.to_string()]).map(|mut v| v.remove(0))
    }

    /// Sends `prompt` and validates the reply against `contract`. A reply
    /// that breaks the contract is re-prompted exactly once; a second
    /// violation is an error. With `allow_none`, a bare "None" reply is
    /// accepted as `Ok(None)`.
    pub fn ask(&self, prompt: &str, contract: &JsonContract, allow_none: bool) -> Result<Answer, AskError> {
        self.ask_checked(prompt, contract, allow_none, |_| Ok(()))
    }

    /// Like [`Gateway::ask`], with an extra check on each parsed record that
    /// counts as a contract violation when it fails.
    pub fn ask_checked(
        &self,
        prompt: &str,
        contract: &JsonContract,
        allow_none: bool,
        check: impl Fn(&Record) -> Result<(), ContractError>,
    ) -> Result<Answer, AskError> {
        let mut raws = Vec::new();
        let mut last_err = None;
        for _ in 0..2 {
            let raw = self.chat(prompt).map_err(AskError::Gateway)?;
            raws.push(raw.clone());
            match parse_answer(&raw, contract) {
                Ok(None) if !allow_none => last_err = Some(ContractError::NotAnObject),
                Ok(Some(r)) => match check(&r) {
                    Ok(()) => return Ok(Answer { record: Some(r), raw: raws }),
                    Err(e) => last_err = Some(e),
                },
                Ok(None) => return Ok(Answer { record: None, raw: raws }),
                Err(e) => last_err = Some(e),
            }
            log::debug!("{} reply broke its contract; re-prompting", contract.name);
        }
        Err(AskError::Contract {
            contract: contract.name,
            error: last_err.expect("loop ran"),
            raw: raws,
        })
    }
}

/// A validated reply plus every raw response received on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub record: Option<Record>,
    pub raw: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AskError {
    #[error(transparent)]
    Gateway(GatewayError),
    #[error("{contract} reply violated its contract twice: {error}")]
    Contract {
        contract: &'static str,
        error: ContractError,
        raw: Vec<String>,
    },
}

#[cfg(test)]
mod tests {
    use super::hashing::HashingEmbedder;
    use super::mock::MockChat;
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, _r: &ChatRequest) -> Result<ChatReply, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(BackendError::Transient("429 Too Many Requests".into()));
            }
            Ok(ChatReply {
                text: "ok".into(),
                usage: Some(Usage {
                    prompt_tokens: 3,
                    completion_tokens: 1,
                }),
            })
        }
    }

    fn gateway(chat: Arc<dyn ChatBackend>) -> (Gateway, Arc<Mutex<Vec<Duration>>>) {
        let waits = Arc::new(Mutex::new(Vec::new()));
        let w = waits.clone();
        let g = Gateway::new(chat, Arc::new(HashingEmbedder::new(64)), GatewayConfig::default())
            .with_sleeper(move |d| w.lock().unwrap().push(d));
        (g, waits)
    }

    #[test]
    fn fixture_reply() {
        let mock = MockChat::new();
        mock.register("P", "canned");
        let (g, _) = gateway(Arc::new(mock));
        assert_eq!(g.chat("P").unwrap(), "canned");
    }

    #[test]
    fn retries_once_after_429() {
        let flaky = Arc::new(Flaky {
            failures: AtomicUsize::new(1),
            calls: AtomicUsize::new(0),
        });
        let (g, waits) = gateway(flaky.clone());
        assert_eq!(g.chat("hello").unwrap(), "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
        let waits = waits.lock().unwrap();
        assert_eq!(waits.len(), 1);
        assert!(waits[0] >= Duration::from_millis(800) && waits[0] <= Duration::from_millis(1200));
        assert_eq!(g.usage().prompt_tokens, 3);
    }

    #[test]
    fn exhausts_retries() {
        let flaky = Arc::new(Flaky {
            failures: AtomicUsize::new(10),
            calls: AtomicUsize::new(0),
        });
        let (g, waits) = gateway(flaky.clone());
        assert!(matches!(g.chat("hello"), Err(GatewayError::Exhausted { attempts: 4, .. })));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 4);
        let waits = waits.lock().unwrap();
        let ms: Vec<u128> = waits.iter().map(|d| d.as_millis()).collect();
        assert!(ms[0] >= 800 && ms[0] <= 1200);
        assert!(ms[1] >= 1600 && ms[1] <= 2400);
        assert!(ms[2] >= 3200 && ms[2] <= 4800);
    }

    #[test]
    fn oversized_prompt_never_reaches_backend() {
        let flaky = Arc::new(Flaky {
            failures: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        });
        let (g, _) = gateway(flaky.clone());
        // 32_000 tokens * 4 chars, plus one char -> 32_001 tokens
        let prompt = "x".repeat(32_000 * 4 + 1);
        assert_eq!(
            g.chat(&prompt),
            Err(GatewayError::OverBudget {
                tokens: 32_001,
                budget: 32_000
            })
        );
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 0);
        assert!(g.chat(&"x".repeat(32_000 * 4)).is_ok());
    }

    #[test]
    fn ask_reprompts_once() {
        let c = JsonContract::new("t").field("score", ValueKind::Enumeration(&["Low", "Medium", "High"]));
        let mock = MockChat::new();
        mock.register_sequence("q", &[r#"{"score": "very high"}"#, r#"{"score": "high"}"#]);
        mock.register_sequence("r", &[r#"{"score": "very high"}"#]);
        let mock = Arc::new(mock);
        let (g, _) = gateway(mock.clone());
        let a = g.ask("q", &c, false).unwrap();
        assert_eq!(a.record.unwrap().str("score"), Some("High"));
        assert_eq!(a.raw.len(), 2);
        assert!(matches!(g.ask("r", &c, false), Err(AskError::Contract { .. })));
        assert_eq!(mock.call_count(), 4);
    }

    #[test]
    fn embed_shapes_and_order() {
        let (g, _) = gateway(Arc::new(MockChat::new()));
        let texts: Vec<String> = ["alpha beta", "gamma", "delta epsilon zeta"].iter().map(|s| s.to_string()).collect();
        let v = g.embed(&texts).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|e| e.dim() == 64));
        let rev: Vec<String> = texts.iter().rev().cloned().collect();
        let w = g.embed(&rev).unwrap();
        assert_eq!(v[0], w[2]);
        assert_eq!(v[2], w[0]);
        let same = g.embed(&["s".to_string(), "s".to_string()]).unwrap();
        assert_eq!(same[0], same[1]);
        assert!(g.embed(&[]).is_err());
        assert!(g.embed(&["  ".to_string()]).is_err());
    }
}
