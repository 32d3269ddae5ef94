//! Token-bucket metered weighted CSFQ on a single feeder link.
//!
//! Conformant packets go straight into the common FIFO and feed the
//! conformant-rate estimate, which sets the excess bandwidth
//! `C_ex = C - r_c`. Non-conformant packets are dropped with probability
//! `max(0, 1 - alpha * w_i / r_nc_i)`, where `alpha` is the normalized fair
//! rate estimated by [`CsfqController::estimate_alpha`].
//!
//! The two places where the fair-rate estimator seeds `alpha` from the excess
//! bandwidth use `C_ex / w_min` (the largest normalized rate any single
//! subscriber could be entitled to) so that scaling every weight by a
//! constant scales `alpha` by its inverse and leaves every drop decision
//! unchanged. With unit weights this reduces to seeding from `C_ex`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::estimator::ExpAvgEstimator;
use crate::packet::{Conformance, Packet};
use crate::rng::SimRng;
use crate::time::SimTime;

/// Bounded byte-counted FIFO.
#[derive(Debug, Clone)]
pub struct FifoQueue {
    capacity: u64,
    occupancy: u64,
    packets: VecDeque<Packet>,
}

impl FifoQueue {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity: capacity_bytes,
            occupancy: 0,
            packets: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn fits(&self, length: u32) -> bool {
        self.occupancy + length as u64 <= self.capacity
    }

    /// Tail-drops by handing the packet back when it does not fit.
    pub fn push(&mut self, p: Packet) -> Result<(), Packet> {
        if !self.fits(p.length) {
            return Err(p);
        }
        self.occupancy += p.length as u64;
        self.packets.push_back(p);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Packet> {
        let p = self.packets.pop_front()?;
        self.occupancy -= p.length as u64;
        Some(p)
    }

    pub fn front(&self) -> Option<&Packet> {
        self.packets.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Enqueued,
    DroppedProb,
    DroppedOverflow,
}

/// Multiplicative decrease of the fair rate whenever the FIFO level crosses
/// a threshold upward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amendment {
    pub threshold_bytes: u64,
    pub factor: f64,
}

impl Default for Amendment {
    fn default() -> Self {
        Amendment {
            threshold_bytes: 64_000,
            factor: 0.09,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsfqConfig {
    pub capacity_bps: f64,
    /// Averaging constant for the conformant and per-subscriber rates.
    pub k: SimTime,
    /// Averaging constant for the aggregate rates, and fair-rate window.
    pub k_alpha: SimTime,
    pub amendment: Option<Amendment>,
}

/// Debug counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsfqStats {
    pub window_updates: u64,
    /// Window ends where the accepted-rate estimate was zero.
    pub skipped_updates: u64,
    pub amendments: u64,
}

#[derive(Debug, Clone)]
pub struct CsfqController {
    capacity: f64,
    excess: f64,
    alpha: f64,
    congested: bool,
    window_start: SimTime,
    r_max: f64,
    k_alpha: SimTime,
    conformant_rate: ExpAvgEstimator,
    arrival_rate: ExpAvgEstimator,
    accepted_rate: ExpAvgEstimator,
    weights: Vec<f64>,
    min_weight: f64,
    nonconformant_rate: Vec<ExpAvgEstimator>,
    amendment: Option<Amendment>,
    stats: CsfqStats,
}

impl CsfqController {
    pub fn new(config: CsfqConfig, weights: Vec<f64>) -> Self {
        assert!(config.capacity_bps > 0.0, "capacity must be positive");
        assert!(!weights.is_empty(), "need at least one subscriber");
        assert!(
            weights.iter().all(|w| w.is_finite() && *w > 0.0),
            "weights must be positive"
        );
        let min_weight = weights.iter().copied().fold(f64::INFINITY, f64::min);
        let nonconformant_rate = weights.iter().map(|_| ExpAvgEstimator::new(config.k)).collect();
        Self {
            capacity: config.capacity_bps,
            excess: config.capacity_bps,
            alpha: config.capacity_bps / min_weight,
            congested: false,
            window_start: SimTime::ZERO,
            r_max: 0.0,
            k_alpha: config.k_alpha,
            conformant_rate: ExpAvgEstimator::new(config.k),
            arrival_rate: ExpAvgEstimator::new(config.k_alpha),
            accepted_rate: ExpAvgEstimator::new(config.k_alpha),
            weights,
            min_weight,
            nonconformant_rate,
            amendment: config.amendment,
            stats: CsfqStats::default(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn excess(&self) -> f64 {
        self.excess
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn is_congested(&self) -> bool {
        self.congested
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn conformant_rate(&self) -> f64 {
        self.conformant_rate.rate()
    }

    pub fn nonconformant_rate(&self, flow: usize) -> f64 {
        self.nonconformant_rate[flow].rate()
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate.rate()
    }

    pub fn accepted_rate(&self) -> f64 {
        self.accepted_rate.rate()
    }

    pub fn stats(&self) -> &CsfqStats {
        &self.stats
    }

    pub fn amendment(&self) -> Option<Amendment> {
        self.amendment
    }

    /// Overrides the current fair-rate estimate.
    pub fn set_alpha(&mut self, alpha: f64) {
        assert!(alpha >= 0.0);
        self.alpha = alpha;
    }

    /// `C_ex / w_min`: the seed used when the fair rate must be restarted.
    fn seed_ceiling(&self) -> f64 {
        self.excess / self.min_weight
    }

    /// Recomputes `C_ex = C - r_c`, clamped to `[0, C]`.
    pub fn excess_bw(&mut self) -> f64 {
        self.excess = (self.capacity - self.conformant_rate.rate()).clamp(0.0, self.capacity);
        self.excess
    }

    /// Drop probability for a non-conformant packet of subscriber `flow`
    /// given its current rate estimate.
    pub fn drop_probability(&self, flow: usize) -> f64 {
        let rate = self.nonconformant_rate[flow].rate();
        if rate <= 0.0 {
            return 0.0;
        }
        (1.0 - self.alpha * self.weights[flow] / rate).max(0.0)
    }

    /// Handles one metered packet arriving at the feeder. The packet is
    /// either pushed onto `fifo` or dropped.
    pub fn on_packet(
        &mut self,
        fifo: &mut FifoQueue,
        p: Packet,
        now: SimTime,
        rng: &mut SimRng,
    ) -> Admission {
        let flow = p.flow.index();
        match p.conformance {
            Conformance::Conformant => {
                self.conformant_rate.update(now, p.length);
                let outcome = self.enqueue(fifo, p);
                self.excess_bw();
                outcome
            }
            Conformance::NonConformant => {
                let rate = self.nonconformant_rate[flow].update(now, p.length);
                let prob = self.drop_probability(flow);
                let normalized = rate / self.weights[flow];
                if prob > rng.uniform() {
                    self.estimate_alpha(normalized, p.length, true, now);
                    Admission::DroppedProb
                } else {
                    self.estimate_alpha(normalized, p.length, false, now);
                    self.enqueue(fifo, p)
                }
            }
            Conformance::Unmetered => panic!("packet reached CSFQ without a conformance verdict"),
        }
    }

    fn enqueue(&mut self, fifo: &mut FifoQueue, p: Packet) -> Admission {
        let before = fifo.occupancy();
        match fifo.push(p) {
            Ok(()) => {
                if self.amendment.is_some() {
                    self.buffer_amendment(before, fifo.occupancy());
                }
                Admission::Enqueued
            }
            Err(_) => Admission::DroppedOverflow,
        }
    }

    /// Fair-rate estimation, run for every non-conformant arrival.
    pub fn estimate_alpha(&mut self, normalized_rate: f64, length_bytes: u32, dropped: bool, now: SimTime) -> f64 {
        let arrivals = self.arrival_rate.update(now, length_bytes);
        if !dropped {
            self.accepted_rate.update(now, length_bytes);
        }
        if arrivals >= self.excess {
            if !self.congested {
                self.congested = true;
                self.window_start = now;
                self.r_max = 0.0;
                if self.alpha == 0.0 {
                    self.alpha = normalized_rate.min(self.seed_ceiling());
                }
            } else if now > self.window_start + self.k_alpha {
                let accepted = self.accepted_rate.rate();
                if accepted > 0.0 {
                    self.alpha = self.alpha * self.excess / accepted;
                    self.stats.window_updates += 1;
                } else {
                    self.stats.skipped_updates += 1;
                }
                self.window_start = now;
                if self.alpha == 0.0 {
                    self.alpha = normalized_rate.min(self.seed_ceiling());
                }
            }
        } else if self.congested {
            self.congested = false;
            self.window_start = now;
            self.r_max = 0.0;
        } else if now < self.window_start + self.k_alpha {
            self.r_max = self.r_max.max(normalized_rate);
        } else {
            self.window_start = now;
            self.alpha = self.r_max;
            self.r_max = 0.0;
        }
        self.alpha
    }

    /// Decreases the fair rate when the FIFO level crosses the amendment
    /// threshold upward between `before` and `after`.
    pub fn buffer_amendment(&mut self, before: u64, after: u64) -> f64 {
        if let Some(a) = self.amendment {
            if before < a.threshold_bytes && a.threshold_bytes <= after {
                self.alpha *= 1.0 - a.factor;
                self.stats.amendments += 1;
            }
        }
        self.alpha
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FairRateError {
    #[error("excess bandwidth must be non-negative, got {0}")]
    NegativeExcess(f64),
    #[error("weights and rates differ in length ({weights} vs {rates})")]
    LengthMismatch { weights: usize, rates: usize },
    #[error("weight {index} is not positive")]
    BadWeight { index: usize },
    #[error("rate {index} is negative")]
    BadRate { index: usize },
}

/// Normalized fair rate `alpha` with `sum_i w_i * min(alpha, r_i / w_i) = C_ex`
/// by waterfilling. When the demand fits, returns `max_i r_i / w_i`.
pub fn solve_fair_rate(excess: f64, weights: &[f64], rates: &[f64]) -> Result<f64, FairRateError> {
    if !(excess >= 0.0) {
        return Err(FairRateError::NegativeExcess(excess));
    }
    if weights.len() != rates.len() {
        return Err(FairRateError::LengthMismatch {
            weights: weights.len(),
            rates: rates.len(),
        });
    }
    if let Some(index) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(FairRateError::BadWeight { index });
    }
    if let Some(index) = rates.iter().position(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(FairRateError::BadRate { index });
    }

    let max_normalized = weights
        .iter()
        .zip(rates)
        .map(|(w, r)| r / w)
        .fold(0.0, f64::max);
    if rates.iter().sum::<f64>() <= excess {
        return Ok(max_normalized);
    }

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (rates[a] / weights[a]).total_cmp(&(rates[b] / weights[b])));
    let mut remaining = excess;
    let mut weight_left: f64 = weights.iter().sum();
    for i in order {
        let normalized = rates[i] / weights[i];
        if normalized * weight_left <= remaining {
            remaining -= rates[i];
            weight_left -= weights[i];
        } else {
            return Ok(remaining / weight_left);
        }
    }
    // Only reachable through rounding when demand equals the excess.
    Ok(max_normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{FlowId, PacketKind};

    fn config(amend: bool) -> CsfqConfig {
        CsfqConfig {
            capacity_bps: 100e6,
            k: SimTime::from_millis(100),
            k_alpha: SimTime::from_millis(200),
            amendment: amend.then(Amendment::default),
        }
    }

    fn pkt(flow: u16, c: Conformance) -> Packet {
        let mut p = Packet::new(FlowId(flow), 1000, 0, PacketKind::UdpData, SimTime::ZERO);
        p.conformance = c;
        p
    }

    /// Scan alpha on a fine grid and refine by bisection on the
    /// monotone allocation function, independent of the waterfilling path.
    fn brute_force_alpha(excess: f64, w: &[f64], r: &[f64]) -> f64 {
        let alloc = |a: f64| -> f64 { w.iter().zip(r).map(|(w, r)| w * a.min(r / w)).sum() };
        let hi0 = w.iter().zip(r).map(|(w, r)| r / w).fold(0.0, f64::max);
        let steps = 100_000;
        let mut lo = 0.0;
        let mut hi = hi0;
        for k in 0..=steps {
            let a = hi0 * k as f64 / steps as f64;
            if alloc(a) >= excess {
                hi = a;
                break;
            }
            lo = a;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if alloc(mid) < excess {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fair_rate_two_flows() {
        let a = solve_fair_rate(10.0, &[1.0, 1.0], &[4.0, 20.0]).unwrap();
        assert!((a - 6.0).abs() < 1e-12);
        assert!((brute_force_alpha(10.0, &[1.0, 1.0], &[4.0, 20.0]) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn fair_rate_udp_phase() {
        let mut w = vec![];
        let mut r = vec![];
        for _ in 0..4 {
            w.extend([2.5, 5.0, 7.5]);
            r.extend([13.5e6, 11e6, 8.5e6]);
        }
        let a = solve_fair_rate(40e6, &w, &r).unwrap();
        assert!((a - 40e6 / 60.0).abs() < 1e-6);
        assert!((a - brute_force_alpha(40e6, &w, &r)).abs() / a < 1e-9);
        for (wi, expected) in [(2.5, 1.6667e6), (5.0, 3.3333e6), (7.5, 5.0e6)] {
            assert!((wi * a - expected).abs() < 100.0);
        }
    }

    #[test]
    fn fair_rate_uncongested_fallback() {
        assert_eq!(solve_fair_rate(10.0, &[1.0, 2.0], &[3.0, 2.0]).unwrap(), 3.0);
        assert_eq!(solve_fair_rate(10.0, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn fair_rate_rejects_bad_input() {
        assert_eq!(
            solve_fair_rate(-1.0, &[1.0], &[1.0]),
            Err(FairRateError::NegativeExcess(-1.0))
        );
        assert!(solve_fair_rate(1.0, &[0.0], &[1.0]).is_err());
        assert!(solve_fair_rate(1.0, &[1.0], &[-1.0]).is_err());
        assert!(solve_fair_rate(1.0, &[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn fair_rate_zero_excess() {
        assert_eq!(solve_fair_rate(0.0, &[1.0, 3.0], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn excess_clamps() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        assert_eq!(c.excess_bw(), 100e6);
        c.conformant_rate = ExpAvgEstimator::new(SimTime::from_millis(100));
        // push r_c above capacity with a burst of simultaneous arrivals
        for _ in 0..3000 {
            c.conformant_rate.update(SimTime::from_secs(1), 1500);
        }
        assert!(c.conformant_rate() > 100e6);
        assert_eq!(c.excess_bw(), 0.0);
    }

    #[test]
    fn excess_from_conformant_rate() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        // 60 Mb/s of conformant CBR: 1000 B every 133.333 us
        let gap = SimTime::from_nanos(133_333);
        let mut now = SimTime::ZERO;
        let mut fifo = FifoQueue::new(u64::MAX);
        let mut rng = SimRng::new(1);
        for _ in 0..30_000 {
            now += gap;
            c.on_packet(&mut fifo, pkt(0, Conformance::Conformant), now, &mut rng);
            fifo.pop();
        }
        assert!((c.excess() - 40e6).abs() < 0.01 * 40e6, "{}", c.excess());
    }

    #[test]
    fn conformant_packet_leaves_alpha_alone() {
        let mut c = CsfqController::new(config(false), vec![2.5, 5.0]);
        let alpha0 = c.alpha();
        assert_eq!(alpha0, 100e6 / 2.5);
        let mut fifo = FifoQueue::new(1_000_000);
        let mut rng = SimRng::new(1);
        let out = c.on_packet(&mut fifo, pkt(1, Conformance::Conformant), SimTime::from_millis(1), &mut rng);
        assert_eq!(out, Admission::Enqueued);
        assert_eq!(fifo.len(), 1);
        assert!(c.conformant_rate() > 0.0);
        assert!(c.excess() < 100e6);
        assert_eq!(c.alpha(), alpha0);
    }

    #[test]
    fn under_fair_rate_never_dropped() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        c.nonconformant_rate[0].update(SimTime::ZERO, 1000);
        c.set_alpha(1e9);
        assert_eq!(c.drop_probability(0), 0.0);
        let mut fifo = FifoQueue::new(u64::MAX);
        let mut rng = SimRng::new(3);
        let mut now = SimTime::ZERO;
        for _ in 0..1000 {
            now += SimTime::from_micros(500);
            c.set_alpha(1e9);
            let out = c.on_packet(&mut fifo, pkt(0, Conformance::NonConformant), now, &mut rng);
            assert_eq!(out, Admission::Enqueued);
        }
    }

    #[test]
    fn drop_probability_formula() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        c.nonconformant_rate[0] = ExpAvgEstimator::new(SimTime::from_millis(100));
        // drive the estimate to ~20 Mb/s
        let mut now = SimTime::ZERO;
        for _ in 0..20_000 {
            now += SimTime::from_micros(400);
            c.nonconformant_rate[0].update(now, 1000);
        }
        c.set_alpha(6e6);
        let rate = c.nonconformant_rate(0);
        assert!((rate - 20e6).abs() < 1.0);
        assert!((c.drop_probability(0) - 0.7).abs() < 1e-6);
    }

    #[test]
    fn uncongested_window_sets_alpha_to_max_normalized_rate() {
        let mut c = CsfqController::new(config(false), vec![2.0]);
        let k_alpha = SimTime::from_millis(200);
        let mut now = SimTime::from_millis(1);
        // below capacity: A stays small, so r_max tracks, then alpha takes it
        c.estimate_alpha(3e6, 1000, false, now);
        now += SimTime::from_millis(10);
        c.estimate_alpha(4e6, 1000, false, now);
        assert_eq!(c.r_max(), 4e6);
        now += k_alpha;
        let a = c.estimate_alpha(3.5e6, 1000, false, now);
        assert_eq!(a, 4e6);
        assert_eq!(c.r_max(), 0.0);
        assert!(!c.is_congested());
    }

    #[test]
    fn congestion_entry_and_multiplicative_update() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        c.excess = 10e6;
        c.set_alpha(0.0);
        let mut now = SimTime::from_secs(1);
        // A is bootstrapped far above C_ex by back-to-back arrivals
        for _ in 0..2000 {
            c.estimate_alpha(20e6, 1000, false, now);
        }
        assert!(c.is_congested());
        assert_eq!(c.r_max(), 0.0);
        assert_eq!(c.alpha(), 10e6, "seeded with min(r, C_ex / w_min)");
        now += SimTime::from_millis(201);
        let f = {
            let mut probe = c.accepted_rate.clone();
            probe.update(now, 1000)
        };
        let a = c.estimate_alpha(20e6, 1000, false, now);
        assert!((a - 10e6 * 10e6 / f).abs() < 1e-6 * a);
    }

    #[test]
    fn leaving_congestion_resets_r_max() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        c.congested = true;
        c.r_max = 5.0;
        c.estimate_alpha(1.0, 1000, false, SimTime::from_secs(1));
        assert!(!c.is_congested());
        assert_eq!(c.r_max(), 0.0);
        assert_eq!(c.window_start, SimTime::from_secs(1));
    }

    #[test]
    fn amendment_crossings() {
        let mut c = CsfqController::new(config(true), vec![1.0]);
        c.set_alpha(1e6);
        assert!((c.buffer_amendment(63_000, 65_000) - 0.91e6).abs() < 1e-6);
        assert!((c.buffer_amendment(65_000, 66_000) - 0.91e6).abs() < 1e-6);
        // downward crossings don't count
        assert!((c.buffer_amendment(65_000, 63_000) - 0.91e6).abs() < 1e-6);
        for _ in 0..4 {
            c.buffer_amendment(63_999, 64_000);
        }
        assert!((c.alpha() - 1e6 * 0.91f64.powi(5)).abs() < 1e-6);
        assert_eq!(c.stats().amendments, 5);
    }

    #[test]
    fn amendment_disabled_is_a_noop() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        c.set_alpha(1e6);
        assert_eq!(c.buffer_amendment(0, 1_000_000), 1e6);
    }

    #[test]
    fn overflow_drops_conformant_too() {
        let mut c = CsfqController::new(config(false), vec![1.0]);
        let mut fifo = FifoQueue::new(1500);
        let mut rng = SimRng::new(1);
        let t = SimTime::from_millis(1);
        assert_eq!(c.on_packet(&mut fifo, pkt(0, Conformance::Conformant), t, &mut rng), Admission::Enqueued);
        assert_eq!(
            c.on_packet(&mut fifo, pkt(0, Conformance::Conformant), t, &mut rng),
            Admission::DroppedOverflow
        );
        assert_eq!(fifo.occupancy(), 1000);
    }

    #[test]
    fn fifo_keeps_order_and_bytes() {
        let mut f = FifoQueue::new(2500);
        for i in 0..3u64 {
            let mut p = pkt(0, Conformance::Conformant);
            p.seq_no = i;
            let res = f.push(p);
            assert_eq!(res.is_ok(), i < 2);
        }
        assert_eq!(f.occupancy(), 2000);
        assert_eq!(f.pop().unwrap().seq_no, 0);
        assert_eq!(f.pop().unwrap().seq_no, 1);
        assert!(f.pop().is_none());
        assert_eq!(f.occupancy(), 0);
    }
}
