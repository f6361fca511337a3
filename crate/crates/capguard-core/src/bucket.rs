//! Token-bucket realization of the published per-seed rate limiters.

/// Continuous token bucket. Time is epoch seconds supplied by the caller;
/// refill is clamped so that a clock that jumps backwards can never mint
/// tokens or drain them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenBucket {
    capacity: f64,
    fill_rate: f64,
    tokens: f64,
    last_refill: f64,
}

impl TokenBucket {
    /// A bucket holding `capacity` tokens, refilled at `per_interval` tokens
    /// every `interval_s` seconds. Starts full.
    pub fn full(capacity: f64, per_interval: f64, interval_s: f64, now: f64) -> Self {
        TokenBucket {
            capacity,
            fill_rate: per_interval / interval_s,
            tokens: capacity,
            last_refill: now,
        }
    }

    /// Conventional sizing: capacity = rate x burst window.
    pub fn for_rate(per_interval: f64, interval_s: f64, burst_window_s: f64, now: f64) -> Self {
        let rate = per_interval / interval_s;
        TokenBucket::full((rate * burst_window_s).max(1.0), per_interval, interval_s, now)
    }

    fn refill(&mut self, now: f64) {
        if now > self.last_refill {
            self.tokens = (self.tokens + (now - self.last_refill) * self.fill_rate).min(self.capacity);
            self.last_refill = now;
        }
    }

    pub fn available(&mut self, now: f64) -> f64 {
        self.refill(now);
        self.tokens
    }

    /// Takes one token if present.
    pub fn try_take(&mut self, now: f64) -> bool {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// Seconds until one token will be available.
    pub fn retry_after(&mut self, now: f64) -> f64 {
        self.refill(now);
        if self.tokens >= 1.0 {
            0.0
        } else {
            (1.0 - self.tokens) / self.fill_rate
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn fill_rate(&self) -> f64 {
        self.fill_rate
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    pub fn last_refill(&self) -> f64 {
        self.last_refill
    }

    /// Reconstructs a bucket from persisted state.
    pub fn restore(capacity: f64, fill_rate: f64, tokens: f64, last_refill: f64) -> Self {
        TokenBucket {
            capacity,
            fill_rate,
            tokens: tokens.min(capacity),
            last_refill,
        }
    }
}
