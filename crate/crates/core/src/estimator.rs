//! Exponentially averaged rate estimation over packet arrivals:
//!
//! `rate <- (1 - e^{-T/K}) * l / T + e^{-T/K} * rate`
//!
//! with `T` the time since the previous update and `l` the packet size in bits.

use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct ExpAvgEstimator {
    k_secs: f64,
    rate: f64,
    last_arrival: Option<SimTime>,
    zero_gap_updates: u64,
}

impl ExpAvgEstimator {
    pub fn new(k: SimTime) -> Self {
        assert!(k > SimTime::ZERO, "averaging constant must be positive");
        Self {
            k_secs: k.as_secs_f64(),
            rate: 0.0,
            last_arrival: None,
            zero_gap_updates: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn last_arrival(&self) -> Option<SimTime> {
        self.last_arrival
    }

    /// Number of updates whose gap was zero and got clamped to one tick.
    pub fn zero_gap_updates(&self) -> u64 {
        self.zero_gap_updates
    }

    /// Folds in one arrival of `length_bytes` at `now` and returns the new rate.
    ///
    /// The first arrival is treated as if it came `K` after a virtual
    /// predecessor.
    pub fn update(&mut self, now: SimTime, length_bytes: u32) -> f64 {
        let gap = match self.last_arrival {
            None => self.k_secs,
            Some(prev) => {
                debug_assert!(now >= prev, "estimator updated out of order");
                let ticks = now.saturating_sub(prev).as_nanos();
                if ticks == 0 {
                    self.zero_gap_updates += 1;
                    1.0 / SimTime::TICKS_PER_SEC as f64
                } else {
                    ticks as f64 / SimTime::TICKS_PER_SEC as f64
                }
            }
        };
        let bits = 8.0 * length_bytes as f64;
        let decay = (-gap / self.k_secs).exp();
        self.rate = (1.0 - decay) * (bits / gap) + decay * self.rate;
        self.last_arrival = Some(now);
        self.rate
    }
}
