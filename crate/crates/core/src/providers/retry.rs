use std::time::Duration;

use rand::Rng;
use tracing::{info, warn};

use super::{ProviderError, ProviderErrorKind};

/// Exponential backoff with equal jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total upstream attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep after the `failures`-th failed attempt (1-based).
    pub fn ceiling(&self, failures: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(failures.saturating_sub(1) as i32))
    }

    /// Sleep after the `failures`-th failure: in `[ceiling/2, ceiling]` with jitter.
    pub fn delay(&self, failures: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(failures);
        if self.jitter {
            let half = ceiling / 2;
            half + half.mul_f64(rng.gen::<f64>())
        } else {
            ceiling
        }
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// attempt budget is spent. Returns the value with the number of attempts used.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut op: impl FnMut(u32) -> Result<T, ProviderError>,
) -> Result<(T, u32), ProviderError> {
    let mut rng = rand::thread_rng();
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => {
                if attempt > 1 {
                    info!(attempts = attempt, "request succeeded after retries");
                }
                return Ok((v, attempt));
            }
            Err(e) if !e.retryable => return Err(e),
            Err(e) if attempt >= max => {
                return Err(ProviderError::new(
                    ProviderErrorKind::Exhausted,
                    format!("gave up after {attempt} attempts; last error: {e}"),
                ));
            }
            Err(e) => {
                let delay = policy.delay(attempt, &mut rng);
                warn!(attempt, error = %e, delay_ms = delay.as_millis() as u64, "retrying request");
                sleeper.sleep(delay);
                attempt += 1;
            }
        }
    }
}
