//! Single-rate token bucket used as a conformance meter. It classifies
//! packets and never delays them.

use crate::packet::{Conformance, Packet};
use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct TokenBucketMeter {
    rate_bps: f64,
    bucket_size: f64,
    tokens: f64,
    last_update: SimTime,
}

impl TokenBucketMeter {
    /// A meter that starts with a full bucket at `now`.
    pub fn new(rate_bps: f64, bucket_size_bytes: u64, now: SimTime) -> Self {
        assert!(rate_bps > 0.0, "token rate must be positive");
        assert!(bucket_size_bytes > 0, "bucket size must be positive");
        let bucket_size = bucket_size_bytes as f64;
        Self {
            rate_bps,
            bucket_size,
            tokens: bucket_size,
            last_update: now,
        }
    }

    pub fn with_tokens(mut self, tokens: f64) -> Self {
        self.tokens = tokens.clamp(0.0, self.bucket_size);
        self
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn bucket_size(&self) -> f64 {
        self.bucket_size
    }

    /// Token level in bytes as of the last observation.
    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    /// Brings the bucket up to date with `now`.
    pub fn refill(&mut self, now: SimTime) {
        debug_assert!(now >= self.last_update, "meter observed out of order");
        if now <= self.last_update {
            return;
        }
        let dt = (now - self.last_update).as_secs_f64();
        self.tokens = (self.tokens + self.rate_bps / 8.0 * dt).min(self.bucket_size);
        self.last_update = now;
    }

    /// Marks `p` conformant when the bucket holds at least its length.
    /// Non-conformant packets leave the level untouched.
    pub fn meter(&mut self, p: &mut Packet, now: SimTime) -> Conformance {
        self.refill(now);
        let len = p.length as f64;
        let verdict = if self.tokens >= len {
            self.tokens -= len;
            Conformance::Conformant
        } else {
            Conformance::NonConformant
        };
        p.conformance = verdict;
        verdict
    }
}
