//! Retry with exponential backoff and a bounded in-flight limiter, shared by
//! the chat and embedding backends.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single failed backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct CallError {
    pub retryable: bool,
    pub message: String,
}

impl CallError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self { retryable: true, message: message.into() }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { retryable: false, message: message.into() }
    }

    /// Classifies an HTTP status: 408, 429 and 5xx are worth retrying.
    pub fn from_status(status: u16, body: &str) -> Self {
        let message = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
        if matches!(status, 408 | 429) || (500..600).contains(&status) {
            Self::transient(message)
        } else {
            Self::fatal(message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 500, max_backoff_ms: 30_000, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Policy without sleeping between attempts; used by mocks and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff_ms: 0, max_backoff_ms: 0, multiplier: 1.0 }
    }

    /// Delay before attempt `attempt + 1`, given `attempt` (1-based) just failed.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * exp).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }

    /// Runs `call` until it succeeds, fails fatally, or attempts run out.
    /// Returns the value or the last error, together with the attempt count.
    pub fn run<T, F>(&self, mut call: F) -> (Result<T, CallError>, u32)
    where
        F: FnMut(u32) -> Result<T, CallError>,
    {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if !e.retryable || attempt >= max => return (Err(e), attempt),
                Err(e) => {
                    log::debug!("attempt {attempt}/{max} failed: {e}");
                    let wait = self.backoff(attempt);
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

/// Counting semaphore bounding concurrent remote calls.
#[derive(Debug)]
pub struct InFlightLimiter {
    capacity: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        while *used >= self.capacity {
            used = self.freed.wait(used).unwrap_or_else(|p| p.into_inner());
        }
        *used += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.limiter.used.lock().unwrap_or_else(|p| p.into_inner());
        *used -= 1;
        self.limiter.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn succeeds_after_transient_failures() {
        let (res, attempts) =
            RetryPolicy::immediate(3).run(|a| if a < 3 { Err(CallError::transient("busy")) } else { Ok(a) });
        assert_eq!(res, Ok(3));
        assert_eq!(attempts, 3);
    }

    #[test]
    fn exhausts_attempts() {
        let (res, attempts) = RetryPolicy::immediate(2).run(|_| Err::<(), _>(CallError::transient("down")));
        assert_eq!(res.unwrap_err().message, "down");
        assert_eq!(attempts, 2);
    }

    #[test]
    fn fatal_is_not_retried() {
        let (res, attempts) = RetryPolicy::immediate(5).run(|_| Err::<(), _>(CallError::fatal("bad request")));
        assert!(res.is_err());
        assert_eq!(attempts, 1);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy { max_attempts: 5, initial_backoff_ms: 100, max_backoff_ms: 350, multiplier: 2.0 };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn status_classification() {
        assert!(CallError::from_status(429, "").retryable);
        assert!(CallError::from_status(503, "").retryable);
        assert!(!CallError::from_status(400, "").retryable);
        assert!(!CallError::from_status(401, "").retryable);
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(InFlightLimiter::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, active, peak) = (limiter.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
