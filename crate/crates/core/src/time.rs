use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// Simulated time as an integer count of nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const TICKS_PER_SEC: u64 = 1_000_000_000;

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * Self::TICKS_PER_SEC)
    }

    /// Rounds to the nearest tick. Negative and non-finite inputs saturate.
    pub fn from_secs_f64(s: f64) -> Self {
        if !s.is_finite() || s <= 0.0 {
            return if s == f64::INFINITY { SimTime(u64::MAX) } else { SimTime(0) };
        }
        SimTime((s * Self::TICKS_PER_SEC as f64).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::TICKS_PER_SEC as f64
    }

    /// Time needed to serialize `bytes` onto a link of `rate_bps`, rounded up
    /// to a whole tick.
    pub fn transmission(bytes: u64, rate_bps: u64) -> Self {
        assert!(rate_bps > 0, "link rate must be positive");
        let bits = bytes as u128 * 8 * Self::TICKS_PER_SEC as u128;
        SimTime(bits.div_ceil(rate_bps as u128) as u64)
    }

    /// Bytes a link of `rate_bps` carries in `self`, rounded down.
    pub fn bytes_at(self, rate_bps: u64) -> u64 {
        (self.0 as u128 * rate_bps as u128 / (8 * Self::TICKS_PER_SEC as u128)) as u64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("simulated time overflow"))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("negative simulated duration"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}s", self.0 / Self::TICKS_PER_SEC, self.0 % Self::TICKS_PER_SEC)
    }
}
