//! Chat-completion access with record/replay.
//!
//! A [`Gateway`] routes each request to its provider's [`Transport`] (an
//! OpenAI-compatible HTTP endpoint or an offline bot), bounds in-flight
//! requests per provider, retries transient failures, and in record or
//! replay mode goes through a [`Cassette`] keyed by request fingerprint.
//! Replay never touches a transport.

pub mod bots;
mod cassette;
mod http;
mod retry;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry};
pub use http::HttpTransport;
pub use retry::{with_retry, AttemptLog, RetryPolicy, Semaphore, SemaphorePermit, Sleeper, ThreadSleeper};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub provider: String,
    pub model: String,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(provider: &str, model: &str, prompt: &str, max_tokens: u32) -> Self {
        Self {
            provider: provider.into(),
            model: model.into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_tokens,
        }
    }

    /// Hex SHA-256 of the canonical JSON body.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        fingerprint_value(&value)
    }

    /// Concatenated user content; what the bots read.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Sorted keys, no insignificant whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json's default map is ordered by key, so a round trip through
    // `Value` sorts every object.
    let sorted: serde_json::Value = serde_json::from_str(&value.to_string()).expect("valid JSON");
    sorted.to_string()
}

pub fn fingerprint_value(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub status: u16,
    pub latency_ms: u64,
    pub provider: String,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for TransportMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(TransportMode::Live),
            "record" => Ok(TransportMode::Record),
            "replay" => Ok(TransportMode::Replay),
            _ => Err(format!("unknown transport mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("no cassette entry for request {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("rate limited (HTTP {status})")]
    RateLimited { status: u16 },
    #[error("server error (HTTP {status}): {body}")]
    ServerError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("environment variable `{0}` with the API key is not set")]
    MissingCredential(String),
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
    #[error("cassette: {0}")]
    Cassette(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. }
                | GatewayError::ServerError { .. }
                | GatewayError::Timeout
                | GatewayError::Network(_)
        )
    }

    /// Classifies a non-success HTTP status.
    pub fn from_status(status: u16, body: String) -> Self {
        match status {
            429 => GatewayError::RateLimited { status },
            408 => GatewayError::Timeout,
            500..=599 => GatewayError::ServerError { status, body },
            _ => GatewayError::Http { status, body },
        }
    }
}

/// One way of answering a chat request.
pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Provider entry of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    /// `openai` for an OpenAI-compatible endpoint, `bot` for the offline bots.
    pub kind: String,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

struct Provider {
    transport: Arc<dyn Transport>,
    limiter: Arc<Semaphore>,
}

/// Result of one gateway call together with its attempt history.
#[derive(Debug, Clone)]
pub struct CallOutcome {
    pub result: Result<ChatResponse, GatewayError>,
    pub attempts: Vec<AttemptLog>,
}

pub struct Gateway {
    mode: TransportMode,
    providers: BTreeMap<String, Provider>,
    cassette: Option<Arc<Cassette>>,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl Gateway {
    pub fn new(
        mode: TransportMode,
        cassette: Option<Arc<Cassette>>,
        policy: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        if mode != TransportMode::Live && cassette.is_none() {
            return Err(GatewayError::Config(format!("{mode:?} mode needs a cassette")));
        }
        Ok(Self {
            mode,
            providers: BTreeMap::new(),
            cassette,
            policy,
            sleeper: Arc::new(ThreadSleeper),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    pub fn add_provider(&mut self, name: &str, transport: Arc<dyn Transport>, max_in_flight: usize) {
        self.providers.insert(
            name.to_string(),
            Provider {
                transport,
                limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
            },
        );
    }

    /// Registers an HTTP provider from configuration.
    pub fn add_configured(&mut self, cfg: &ProviderConfig) -> Result<(), GatewayError> {
        match cfg.kind.as_str() {
            "openai" => {
                let url = cfg
                    .base_url
                    .clone()
                    .ok_or_else(|| GatewayError::Config(format!("provider `{}` needs base_url", cfg.name)))?;
                let t = HttpTransport::new(&url, cfg.api_key_env.clone(), Duration::from_secs(cfg.timeout_secs))?;
                self.add_provider(&cfg.name, Arc::new(t), cfg.max_in_flight);
                Ok(())
            }
            other => Err(GatewayError::Config(format!(
                "provider `{}` has kind `{other}`; bots are registered by the harness",
                cfg.name
            ))),
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> CallOutcome {
        let fingerprint = req.fingerprint();
        if self.mode == TransportMode::Replay {
            let cassette = self.cassette.as_ref().expect("checked in new");
            let result = cassette
                .lookup(&fingerprint)
                .map(|e| e.to_response())
                .ok_or(GatewayError::CassetteMiss {
                    fingerprint: fingerprint.clone(),
                });
            return CallOutcome {
                attempts: vec![AttemptLog::replay(&result)],
                result,
            };
        }
        let Some(provider) = self.providers.get(&req.provider) else {
            return CallOutcome {
                result: Err(GatewayError::UnknownProvider(req.provider.clone())),
                attempts: Vec::new(),
            };
        };
        let (result, attempts) = {
            let _permit = provider.limiter.acquire();
            with_retry(&self.policy, &fingerprint, self.sleeper.as_ref(), || {
                provider.transport.send(req)
            })
        };
        if let (TransportMode::Record, Ok(resp)) = (self.mode, &result) {
            let cassette = self.cassette.as_ref().expect("checked in new");
            if let Err(e) = cassette.append(&fingerprint, resp) {
                return CallOutcome {
                    result: Err(e),
                    attempts,
                };
            }
        }
        CallOutcome { result, attempts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    #[test]
    fn fingerprint_ignores_key_order_and_whitespace() {
        let a: ChatRequest = serde_json::from_str(
            r#"{"provider":"p","model":"m","messages":[{"role":"user","content":"hi"}],"temperature":0.0,"max_tokens":64}"#,
        )
        .unwrap();
        let b: ChatRequest = serde_json::from_str(
            r#"{ "max_tokens": 64, "temperature": 0.0,
                 "messages": [ { "content": "hi", "role": "user" } ], "model": "m", "provider": "p" }"#,
        )
        .unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let v1: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":3}}"#).unwrap();
        let v2: serde_json::Value = serde_json::from_str(r#"{ "a" : { "x":3, "y":2 }, "b":1 }"#).unwrap();
        assert_eq!(fingerprint_value(&v1), fingerprint_value(&v2));
        let mut c = a.clone();
        c.messages[0].content = "hi!".into();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(ChatRequest::new("p", "m", "hi", 64).temperature, 0.0);
    }

    struct Fixed(String);
    impl Transport for Fixed {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            Ok(ChatResponse {
                text: self.0.clone(),
                status: 200,
                latency_ms: 0,
                provider: req.provider.clone(),
                model: req.model.clone(),
            })
        }
    }

    struct Panics;
    impl Transport for Panics {
        fn send(&self, _: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            panic!("replay must not reach a transport");
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let req = ChatRequest::new("p", "m", "question", 32);
        let recorded = {
            let cassette = Arc::new(Cassette::open_for_record(&path).unwrap());
            let mut g = Gateway::new(TransportMode::Record, Some(cassette), RetryPolicy::default()).unwrap();
            g.add_provider("p", Arc::new(Fixed("answer".into())), 1);
            g.complete(&req).result.unwrap()
        };
        let cassette = Arc::new(Cassette::open_for_replay(&path).unwrap());
        let mut g = Gateway::new(TransportMode::Replay, Some(cassette), RetryPolicy::default()).unwrap();
        g.add_provider("p", Arc::new(Panics), 1);
        let out = g.complete(&req);
        assert_eq!(out.result.unwrap(), recorded);
        assert_eq!(out.attempts.len(), 1);
        let miss = g.complete(&ChatRequest::new("p", "m", "other", 32));
        assert!(matches!(miss.result, Err(GatewayError::CassetteMiss { .. })));
    }

    #[test]
    fn replay_needs_a_cassette() {
        assert!(Gateway::new(TransportMode::Replay, None, RetryPolicy::default()).is_err());
    }

    /// Counts concurrent calls and remembers the peak.
    struct Counting {
        current: AtomicUsize,
        peak: Mutex<usize>,
    }

    impl Transport for Counting {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            {
                let mut p = self.peak.lock().unwrap();
                *p = (*p).max(now);
            }
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Fixed("ok".into()).send(req)
        }
    }

    #[test]
    fn in_flight_bound_per_provider() {
        let counting = Arc::new(Counting {
            current: AtomicUsize::new(0),
            peak: Mutex::new(0),
        });
        let mut g = Gateway::new(TransportMode::Live, None, RetryPolicy::default()).unwrap();
        g.add_provider("p", counting.clone(), 3);
        let g = Arc::new(g);
        let handles: Vec<_> = (0..12)
            .map(|i| {
                let g = g.clone();
                std::thread::spawn(move || g.complete(&ChatRequest::new("p", "m", &format!("q{i}"), 8)))
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().result.is_ok());
        }
        let peak = *counting.peak.lock().unwrap();
        assert!((1..=3).contains(&peak), "peak {peak}");
    }
}
