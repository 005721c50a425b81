use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Blocking token bucket. Burst capacity equals one second's worth of tokens
/// (at least one).
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `rate <= 0` yields a bucket that never blocks.
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn is_unlimited(&self) -> bool {
        self.rate.is_nan() || self.rate <= 0.0
    }

    /// Blocks until a token is available, then takes it.
    pub fn acquire(&self) {
        if self.is_unlimited() {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlimited_never_blocks() {
        let b = TokenBucket::new(0.0);
        let start = Instant::now();
        for _ in 0..1000 {
            b.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn paces_after_burst() {
        // 20/s: 20 burst tokens, then ~50 ms per extra token.
        let b = TokenBucket::new(20.0);
        let start = Instant::now();
        for _ in 0..25 {
            b.acquire();
        }
        let elapsed = start.elapsed();
        assert!(elapsed >= Duration::from_millis(200), "{elapsed:?}");
        assert!(elapsed < Duration::from_secs(2), "{elapsed:?}");
    }
}
