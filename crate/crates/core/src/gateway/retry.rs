//! Retry with exponential backoff and the per-provider in-flight bound.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Jitter is drawn from a stream seeded by this and the request
    /// fingerprint, so the schedule does not depend on thread interleaving.
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter_seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (2-based): `min(max, base * 2^(attempt-2))`
    /// scaled by a jitter factor in `[1, 1.5)`.
    fn delay(&self, attempt: u32, rng: &mut ChaCha8Rng) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (attempt - 2).min(32))
            .min(self.max_delay_ms);
        let factor: f64 = 1.0 + 0.5 * rng.gen::<f64>();
        Duration::from_millis((exp as f64 * factor).round() as u64)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub delay_before_ms: u64,
    /// `ok`, `replay`, or the error text.
    pub outcome: String,
    pub status: Option<u16>,
}

impl AttemptLog {
    pub(crate) fn replay(result: &Result<ChatResponse, GatewayError>) -> Self {
        Self {
            attempt: 1,
            delay_before_ms: 0,
            outcome: match result {
                Ok(_) => "replay".into(),
                Err(e) => e.to_string(),
            },
            status: result.as_ref().ok().map(|r| r.status),
        }
    }
}

fn status_of(e: &GatewayError) -> Option<u16> {
    match e {
        GatewayError::RateLimited { status }
        | GatewayError::ServerError { status, .. }
        | GatewayError::Http { status, .. } => Some(*status),
        _ => None,
    }
}

fn stream_seed(seed: u64, fingerprint: &str) -> u64 {
    let head = fingerprint
        .get(..16)
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .unwrap_or(0);
    seed ^ head
}

/// Calls `op` until it succeeds, fails with a non-retryable error, or the
/// attempt budget is spent.
pub fn with_retry<F>(
    policy: &RetryPolicy,
    fingerprint: &str,
    sleeper: &dyn Sleeper,
    mut op: F,
) -> (Result<ChatResponse, GatewayError>, Vec<AttemptLog>)
where
    F: FnMut() -> Result<ChatResponse, GatewayError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(policy.jitter_seed, fingerprint));
    let mut log = Vec::new();
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        let delay = if attempt == 1 {
            Duration::ZERO
        } else {
            policy.delay(attempt, &mut rng)
        };
        if !delay.is_zero() {
            sleeper.sleep(delay);
        }
        let result = op();
        log.push(AttemptLog {
            attempt,
            delay_before_ms: delay.as_millis() as u64,
            outcome: match &result {
                Ok(_) => "ok".into(),
                Err(e) => e.to_string(),
            },
            status: match &result {
                Ok(r) => Some(r.status),
                Err(e) => status_of(e),
            },
        });
        match result {
            Ok(r) => return (Ok(r), log),
            Err(e) if !e.is_retryable() => return (Err(e), log),
            Err(e) if attempt >= max => {
                return (
                    Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    }),
                    log,
                )
            }
            Err(e) => log::warn!("attempt {attempt} failed ({e}); retrying"),
        }
        attempt += 1;
    }
}

/// Counting semaphore; permits are returned on drop.
pub struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct SemaphorePermit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphorePermit<'_> {
        let mut n = self.available.lock().expect("semaphore lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore lock");
        }
        *n -= 1;
        SemaphorePermit { sem: self }
    }
}

impl Drop for SemaphorePermit<'_> {
    fn drop(&mut self) {
        *self.sem.available.lock().expect("semaphore lock") += 1;
        self.sem.freed.notify_one();
    }
}
