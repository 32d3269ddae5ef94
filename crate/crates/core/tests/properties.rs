mod common;

use access_csfq::csfq::{Admission, Amendment, CsfqConfig};
use access_csfq::drr::Enqueue;
use access_csfq::*;
use proptest::prelude::*;

fn packet(flow: u16, length: u32, seq: u64, conformance: Conformance) -> Packet {
    let mut p = Packet::new(FlowId(flow), length, seq, PacketKind::UdpData, SimTime::ZERO);
    p.conformance = conformance;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimator_converges_on_cbr(
        rate in 1e5f64..5e7,
        length in 100u32..1500,
        k_ms in 10u64..200,
    ) {
        let k = SimTime::from_millis(k_ms);
        let period = (8.0 * length as f64 / rate * 1e9).round() as u64;
        let actual = 8.0 * length as f64 / (period as f64 * 1e-9);
        let mut est = ExpAvgEstimator::new(k);
        let mut t = 0;
        while t <= 10 * k.as_nanos() {
            est.update(SimTime::from_nanos(t), length);
            t += period;
        }
        prop_assert!((est.rate() - actual).abs() / actual < 0.01, "{} vs {}", est.rate(), actual);
    }

    #[test]
    fn estimator_stays_nonnegative(gaps in prop::collection::vec((0u64..50_000_000, 1u32..1500), 1..300)) {
        let mut est = ExpAvgEstimator::new(SimTime::from_millis(100));
        let mut t = 0;
        for (gap, len) in gaps {
            t += gap;
            let r = est.update(SimTime::from_nanos(t), len);
            prop_assert!(r.is_finite() && r >= 0.0);
        }
    }

    #[test]
    fn meter_respects_token_envelope(
        rate in 1e5f64..1e8,
        bucket in 1_000u64..2_000_000,
        trace in prop::collection::vec((0u64..5_000_000, 40u32..1500), 1..200),
    ) {
        let mut m = TokenBucketMeter::new(rate, bucket, SimTime::ZERO);
        let mut t = 0u64;
        let mut marks = Vec::new();
        for (i, (gap, len)) in trace.into_iter().enumerate() {
            t += gap;
            let mut p = packet(0, len, i as u64, Conformance::Unmetered);
            let c = m.meter(&mut p, SimTime::from_nanos(t));
            prop_assert_eq!(c, p.conformance);
            prop_assert!(m.tokens() >= 0.0 && m.tokens() <= bucket as f64);
            marks.push((t, len, c == Conformance::Conformant));
        }
        // Conformant bytes over any [s, t] fit in bucket + rate * (t - s).
        for a in 0..marks.len() {
            let mut bytes = 0.0;
            for b in a..marks.len() {
                if marks[b].2 {
                    bytes += marks[b].1 as f64;
                }
                let span = (marks[b].0 - marks[a].0) as f64 * 1e-9;
                prop_assert!(bytes <= bucket as f64 + rate / 8.0 * span + 1e-6);
            }
        }
    }

    #[test]
    fn conformant_packets_never_dropped_by_probability(
        stream in prop::collection::vec((0u16..4, 0u64..200_000, any::<bool>()), 1..2000),
        seed in any::<u64>(),
    ) {
        let cfg = CsfqConfig {
            capacity_bps: 100e6,
            k: SimTime::from_millis(100),
            k_alpha: SimTime::from_millis(200),
            amendment: Some(Amendment::default()),
        };
        let mut ctl = CsfqController::new(cfg, vec![2.5, 5.0, 7.5, 10.0]);
        let mut fifo = FifoQueue::new(u64::MAX);
        let mut rng = SimRng::new(seed);
        let mut t = 0;
        for (i, (flow, gap, conformant)) in stream.into_iter().enumerate() {
            t += gap;
            let c = if conformant { Conformance::Conformant } else { Conformance::NonConformant };
            let out = ctl.on_packet(&mut fifo, packet(flow, 1000, i as u64, c), SimTime::from_nanos(t), &mut rng);
            if conformant {
                prop_assert_eq!(out, Admission::Enqueued);
            }
            prop_assert!(ctl.alpha() >= 0.0 && ctl.alpha().is_finite());
        }
    }

    #[test]
    fn fifo_preserves_order(ops in prop::collection::vec(prop::option::of(40u32..1500), 1..500)) {
        let mut fifo = FifoQueue::new(100_000);
        let mut model = std::collections::VecDeque::new();
        for (i, op) in ops.into_iter().enumerate() {
            match op {
                Some(len) => {
                    let fits = fifo.fits(len);
                    let pushed = fifo.push(packet(0, len, i as u64, Conformance::Conformant)).is_ok();
                    prop_assert_eq!(fits, pushed);
                    if pushed {
                        model.push_back((i as u64, len));
                    }
                }
                None => {
                    let got = fifo.pop().map(|p| (p.seq_no, p.length));
                    prop_assert_eq!(got, model.pop_front());
                }
            }
            let sum: u64 = model.iter().map(|(_, l)| *l as u64).sum();
            prop_assert_eq!(fifo.occupancy(), sum);
            prop_assert!(fifo.occupancy() <= fifo.capacity());
        }
    }

    #[test]
    fn drr_priority_and_work_conservation(
        ops in prop::collection::vec(prop::option::of((0u16..4, 40u32..1500, any::<bool>())), 1..600),
    ) {
        let mut s = DrrScheduler::new(&[1.0, 2.0, 3.0, 4.0], 1_000_000, 1_000_000);
        for (i, op) in ops.into_iter().enumerate() {
            match op {
                Some((flow, len, conformant)) => {
                    let c = if conformant { Conformance::Conformant } else { Conformance::NonConformant };
                    prop_assert_eq!(s.enqueue(packet(flow, len, i as u64, c)), Enqueue::Enqueued);
                }
                None => {
                    let had_conformant = !s.conformant_queue().is_empty();
                    let was_empty = s.is_empty();
                    let before = s.occupancy();
                    match s.dequeue() {
                        Some(p) => {
                            prop_assert!(!was_empty);
                            if had_conformant {
                                prop_assert_eq!(p.conformance, Conformance::Conformant);
                            }
                            prop_assert_eq!(s.occupancy(), before - p.length as u64);
                        }
                        None => prop_assert!(was_empty),
                    }
                }
            }
            for f in 0..4 {
                prop_assert!(s.deficit(f) >= 0.0);
                if s.queue(f).is_empty() {
                    prop_assert_eq!(s.deficit(f), 0.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fair_rate_matches_bisection(
        inst in prop::collection::vec((0.01f64..10.0, 0.0f64..100e6), 1..=8),
        excess_frac in 0.0f64..1.2,
    ) {
        let weights: Vec<f64> = inst.iter().map(|x| x.0).collect();
        let rates: Vec<f64> = inst.iter().map(|x| x.1).collect();
        let excess = excess_frac * rates.iter().sum::<f64>();
        let got = solve_fair_rate(excess, &weights, &rates).unwrap();
        let want = common::bisect_fair_rate(excess, &weights, &rates);
        let scale = want.abs().max(f64::MIN_POSITIVE);
        prop_assert!((got - want).abs() / scale < 1e-9 || (got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

fn replay(weights: &[f64], stream: &[(u16, u64, bool)], seed: u64) -> (Vec<Admission>, Vec<f64>) {
    let cfg = CsfqConfig {
        capacity_bps: 100e6,
        k: SimTime::from_millis(100),
        k_alpha: SimTime::from_millis(200),
        amendment: Some(Amendment { threshold_bytes: 64_000, factor: 0.09 }),
    };
    let mut ctl = CsfqController::new(cfg, weights.to_vec());
    let mut fifo = FifoQueue::new(16_000_000);
    let mut rng = SimRng::new(seed);
    let mut t = 0;
    let mut outs = Vec::new();
    let mut alphas = Vec::new();
    for (i, &(flow, gap, conformant)) in stream.iter().enumerate() {
        t += gap;
        let c = if conformant { Conformance::Conformant } else { Conformance::NonConformant };
        outs.push(ctl.on_packet(&mut fifo, packet(flow, 1000, i as u64, c), SimTime::from_nanos(t), &mut rng));
        alphas.push(ctl.alpha());
        // drain at line rate between arrivals
        let mut budget = gap as f64 * 100e6 / 8e9;
        while let Some(p) = fifo.front() {
            if p.length as f64 > budget {
                break;
            }
            budget -= p.length as f64;
            fifo.pop();
        }
    }
    (outs, alphas)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weight_scaling_is_invariant(
        weights in prop::collection::vec(0.5f64..10.0, 4),
        stream in prop::collection::vec((0u16..4, 0u64..150_000, prop::bool::weighted(0.3)), 1..3000),
        seed in any::<u64>(),
    ) {
        let (base, alpha) = replay(&weights, &stream, seed);
        for c in [4.0, 0.5] {
            let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let (outs, alpha_c) = replay(&scaled, &stream, seed);
            prop_assert_eq!(&outs, &base);
            for (a, b) in alpha.iter().zip(&alpha_c) {
                prop_assert_eq!(*a, b * c);
            }
        }
    }
}

#[test]
fn alpha_tracks_oracle_under_stationary_overload() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[1.0, 2.0, 3.0], &[40e6, 40e6, 40e6]),
        (&[2.5, 5.0, 7.5, 10.0], &[16e6, 16e6, 16e6, 16e6]),
        (&[1.0, 1.0, 4.0, 2.0], &[5e6, 60e6, 30e6, 50e6]),
    ];
    for (i, (w, r)) in cases.into_iter().enumerate() {
        let o = common::stationary_overload(50e6, w, r, SimTime::from_secs(20), i as u64);
        let err = (o.alpha_mean - o.oracle).abs() / o.oracle;
        assert!(err < 0.10, "case {i}: alpha {} oracle {}", o.alpha_mean, o.oracle);
    }
}
