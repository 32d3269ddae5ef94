//! Shared oracles and drivers for the integration tests.
#![allow(dead_code)]

use access_csfq::csfq::{Admission, CsfqConfig};
use access_csfq::*;

/// Independent fair-rate oracle: bisection on `F(a) = sum_i min(r_i, a w_i)`.
pub fn bisect_fair_rate(excess: f64, weights: &[f64], rates: &[f64]) -> f64 {
    let top = weights.iter().zip(rates).map(|(w, r)| r / w).fold(0.0, f64::max);
    let demand: f64 = rates.iter().sum();
    if demand <= excess {
        return top;
    }
    let served = |a: f64| -> f64 { weights.iter().zip(rates).map(|(w, r)| r.min(a * w)).sum() };
    let (mut lo, mut hi) = (0.0_f64, top);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if served(mid) < excess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub struct Overload {
    pub alpha_mean: f64,
    pub oracle: f64,
}

/// Drives a bare controller with CBR non-conformant streams of the given
/// rates (bits/s) and returns the time-averaged alpha over the second half
/// of `duration` together with the fair rate for `C_ex = capacity`.
pub fn stationary_overload(capacity: f64, weights: &[f64], rates: &[f64], duration: SimTime, seed: u64) -> Overload {
    let cfg = CsfqConfig {
        capacity_bps: capacity,
        k: SimTime::from_millis(100),
        k_alpha: SimTime::from_millis(200),
        amendment: None,
    };
    let mut ctl = CsfqController::new(cfg, weights.to_vec());
    let mut fifo = FifoQueue::new(u64::MAX);
    let mut rng = SimRng::new(seed);
    let mut phase = SimRng::new(seed).fork(99);
    let periods: Vec<u64> = rates.iter().map(|r| (8000.0 / r * 1e9).round() as u64).collect();
    let mut next: Vec<u64> = periods.iter().map(|p| (phase.uniform() * *p as f64) as u64).collect();
    let mut seq = vec![0u64; rates.len()];
    let half = duration.as_nanos() / 2;
    let (mut acc, mut last_t, mut last_alpha) = (0.0, half, f64::NAN);
    loop {
        let (i, &t) = next.iter().enumerate().min_by_key(|(_, t)| **t).unwrap();
        if t >= duration.as_nanos() {
            break;
        }
        let now = SimTime::from_nanos(t);
        let mut p = Packet::new(FlowId(i as u16), 1000, seq[i], PacketKind::UdpData, now);
        p.conformance = Conformance::NonConformant;
        seq[i] += 1;
        next[i] += periods[i];
        if t >= half {
            if !last_alpha.is_nan() {
                acc += last_alpha * (t - last_t) as f64;
            }
            last_t = t;
        }
        if ctl.on_packet(&mut fifo, p, now, &mut rng) == Admission::Enqueued {
            fifo.pop();
        }
        last_alpha = ctl.alpha();
    }
    acc += last_alpha * (duration.as_nanos() - last_t) as f64;
    Overload {
        alpha_mean: acc / (duration.as_nanos() - half) as f64,
        oracle: solve_fair_rate(capacity, weights, rates).unwrap(),
    }
}

/// A single-subscriber scenario on the built-in topology.
pub fn lone_flow(scheme: Scheme, source: SourceSpec, token_rate: u64, horizon: SimTime) -> ScenarioSpec {
    let mut spec = ScenarioSpec::reference(scheme);
    spec.horizon = horizon;
    spec.repetitions = 1;
    spec.subscribers = vec![SubscriberSpec {
        id: 0,
        group: "1".into(),
        token_rate,
        bucket_size: 1_000_000,
        source,
        start_time: SimTime::ZERO,
    }];
    spec
}

pub fn reference_udp() -> SourceSpec {
    SourceSpec::Udp {
        packet_length: 1000,
        period: SimTime::from_micros(500),
    }
}

/// The built-in scenario cut down to `horizon`.
pub fn truncated(scheme: Scheme, horizon: SimTime, seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::reference(scheme);
    spec.horizon = horizon;
    spec.seed = seed;
    spec
}
