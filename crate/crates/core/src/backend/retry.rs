use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Outcome of a single attempt.
pub(crate) enum Attempt<T, E> {
    Done(T),
    /// Transport failure or 5xx; worth retrying.
    Transient(String),
    /// Anything else; returned immediately.
    Fatal(E),
}

/// Bounded exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff_ms: 1000, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms as u64)
    }

    /// Run `op` until it succeeds, fails fatally or runs out of attempts.
    /// On exhaustion returns `(attempts, last transient message)`.
    pub(crate) fn run<T, E>(
        &self,
        what: &str,
        mut op: impl FnMut() -> Attempt<T, E>,
    ) -> Result<Result<T, E>, (u32, String)> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match op() {
                Attempt::Done(v) => return Ok(Ok(v)),
                Attempt::Fatal(e) => return Ok(Err(e)),
                Attempt::Transient(msg) => {
                    if i + 1 < attempts {
                        let wait = self.backoff(i);
                        log::warn!("{what}: attempt {}/{attempts} failed: {msg}; retrying in {wait:?}", i + 1);
                        thread::sleep(wait);
                    } else {
                        log::error!("{what}: attempt {}/{attempts} failed: {msg}; giving up", i + 1);
                    }
                    last = msg;
                }
            }
        }
        Err((attempts, last))
    }
}
