//! Per-flow accounting collected by a run and the statistics computed from
//! it: binned throughput series, window means and confidence intervals.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::csfq::{solve_fair_rate, CsfqStats};
use crate::scenario::{ScenarioSpec, Scheme, SourceSpec};
use crate::time::SimTime;
use crate::traffic::TcpStats;

/// Packet and byte totals for one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub packets: u64,
    pub bytes: u64,
}

impl Tally {
    pub fn add(&mut self, bytes: u32) {
        self.packets += 1;
        self.bytes += bytes as u64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub sent: Tally,
    pub marked_conformant: Tally,
    pub marked_nonconformant: Tally,
    pub delivered_conformant: Tally,
    pub delivered_nonconformant: Tally,
    /// Non-conformant packets dropped by the CSFQ probabilistic stage.
    pub dropped_prob: Tally,
    pub dropped_overflow_conformant: Tally,
    pub dropped_overflow_nonconformant: Tally,
    /// Data packets still inside the network when the horizon was reached.
    pub in_flight: Tally,
    /// Deliveries whose transmission counter was below one already delivered.
    pub inversions: u64,
}

impl FlowCounters {
    pub fn delivered(&self) -> Tally {
        Tally {
            packets: self.delivered_conformant.packets + self.delivered_nonconformant.packets,
            bytes: self.delivered_conformant.bytes + self.delivered_nonconformant.bytes,
        }
    }

    pub fn dropped(&self) -> Tally {
        let parts = [
            self.dropped_prob,
            self.dropped_overflow_conformant,
            self.dropped_overflow_nonconformant,
        ];
        Tally {
            packets: parts.iter().map(|t| t.packets).sum(),
            bytes: parts.iter().map(|t| t.bytes).sum(),
        }
    }

    /// sent = delivered + dropped + in flight, in packets and in bytes.
    pub fn conserved(&self) -> bool {
        let d = self.delivered();
        let x = self.dropped();
        self.sent.packets == d.packets + x.packets + self.in_flight.packets
            && self.sent.bytes == d.bytes + x.bytes + self.in_flight.bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub id: u16,
    pub group: String,
    pub token_rate: u64,
    pub is_tcp: bool,
    pub start_time: SimTime,
    /// Delivered data bytes per `RunRecord::resolution` bin.
    pub delivered_bins: Vec<u64>,
    pub counters: FlowCounters,
    pub tcp: Option<TcpStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub seed: u64,
    pub digest: String,
    pub horizon: SimTime,
    pub resolution: SimTime,
    pub feeder_rate: u64,
    pub flows: Vec<FlowRecord>,
    /// Bytes whose transmission on the feeder completed in each bin.
    pub feeder_bins: Vec<u64>,
    /// Data bytes arriving at the access switch in each bin.
    pub offered_bins: Vec<u64>,
    pub csfq: Option<CsfqStats>,
    pub events: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("bin width {width} is not a positive multiple of the record resolution {resolution}")]
    BinWidth { width: SimTime, resolution: SimTime },
    #[error("window [{0}, {1}) is empty or outside the horizon")]
    Window(SimTime, SimTime),
    #[error("records disagree on scenario or scheme")]
    Mismatch,
    #[error("no records")]
    Empty,
}

impl RunRecord {
    pub fn bins(&self) -> usize {
        self.feeder_bins.len()
    }

    fn bin_range(&self, start: SimTime, end: SimTime) -> Result<std::ops::Range<usize>, MetricsError> {
        let res = self.resolution.as_nanos();
        if end <= start
            || end > self.horizon
            || !start.as_nanos().is_multiple_of(res)
            || !end.as_nanos().is_multiple_of(res)
        {
            return Err(MetricsError::Window(start, end));
        }
        Ok((start.as_nanos() / res) as usize..(end.as_nanos() / res) as usize)
    }

    /// Mean delivered throughput of `flow` over `[start, end)` in bits/s.
    pub fn window_throughput(&self, flow: usize, start: SimTime, end: SimTime) -> Result<f64, MetricsError> {
        let r = self.bin_range(start, end)?;
        let bytes: u64 = self.flows[flow].delivered_bins[r].iter().sum();
        Ok(8.0 * bytes as f64 / (end - start).as_secs_f64())
    }

    /// Feeder output rate over `[start, end)` in bits/s.
    pub fn feeder_throughput(&self, start: SimTime, end: SimTime) -> Result<f64, MetricsError> {
        let r = self.bin_range(start, end)?;
        let bytes: u64 = self.feeder_bins[r].iter().sum();
        Ok(8.0 * bytes as f64 / (end - start).as_secs_f64())
    }

    /// Data arrival rate at the access switch over `[start, end)` in bits/s.
    pub fn offered_load(&self, start: SimTime, end: SimTime) -> Result<f64, MetricsError> {
        let r = self.bin_range(start, end)?;
        let bytes: u64 = self.offered_bins[r].iter().sum();
        Ok(8.0 * bytes as f64 / (end - start).as_secs_f64())
    }

    /// Time from `after` until `flow` first completes a sliding window of
    /// length `window` whose mean throughput is at least `threshold_bps`.
    /// `None` if that never happens before the horizon.
    pub fn convergence_time(
        &self,
        flow: usize,
        after: SimTime,
        window: SimTime,
        threshold_bps: f64,
    ) -> Result<Option<SimTime>, MetricsError> {
        let res = self.resolution.as_nanos();
        if window.as_nanos() == 0 || !window.as_nanos().is_multiple_of(res) {
            return Err(MetricsError::BinWidth { width: window, resolution: self.resolution });
        }
        let first = self.bin_range(after, self.horizon)?.start;
        let span = (window.as_nanos() / res) as usize;
        let bins = &self.flows[flow].delivered_bins;
        let need = threshold_bps * window.as_secs_f64() / 8.0;
        if first + span > bins.len() {
            return Ok(None);
        }
        let mut sum: u64 = bins[first..first + span].iter().sum();
        let mut k = first;
        loop {
            if sum as f64 >= need {
                let end = SimTime::from_nanos((k + span) as u64 * res);
                return Ok(Some(end - after));
            }
            if k + span >= bins.len() {
                return Ok(None);
            }
            sum = sum + bins[k + span] - bins[k];
            k += 1;
        }
    }

    pub fn total_inversions(&self) -> u64 {
        self.flows.iter().map(|f| f.counters.inversions).sum()
    }
}

/// Throughput series per flow: `series[flow][k]` is the delivered rate in
/// bits/s over `[k w, (k + 1) w)`. A trailing partial bin is averaged over
/// its full width.
pub fn bin_throughput(record: &RunRecord, bin_width: SimTime) -> Result<Vec<Vec<f64>>, MetricsError> {
    let res = record.resolution.as_nanos();
    if bin_width.as_nanos() == 0 || !bin_width.as_nanos().is_multiple_of(res) {
        return Err(MetricsError::BinWidth {
            width: bin_width,
            resolution: record.resolution,
        });
    }
    let per = (bin_width.as_nanos() / res) as usize;
    let secs = bin_width.as_secs_f64();
    Ok(record
        .flows
        .iter()
        .map(|f| {
            f.delivered_bins
                .chunks(per)
                .map(|c| 8.0 * c.iter().sum::<u64>() as f64 / secs)
                .collect()
        })
        .collect())
}

/// Two-sided 95% Student-t quantile for `n - 1` degrees of freedom.
pub fn t_quantile_975(n: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .ok()
        .map(|t| t.inverse_cdf(0.975))
}

/// Sample mean and 95% confidence half-width (`None` when `n < 2`).
pub fn mean_ci(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let half = t_quantile_975(n).map(|t| {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        t * var.sqrt() / (n as f64).sqrt()
    });
    (mean, half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStat {
    pub flow: u16,
    pub group: String,
    pub mean_bps: f64,
    pub ci95_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub group: String,
    pub mean_bps: f64,
    pub ci95_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStat {
    pub start: SimTime,
    pub end: SimTime,
    pub repetitions: usize,
    pub flows: Vec<FlowStat>,
    /// Per repetition, the mean over a group's members; then across repetitions.
    pub groups: Vec<GroupStat>,
}

impl WindowStat {
    pub fn group(&self, name: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Mean window throughput per flow and per group across repetitions, with
/// 95% confidence half-widths. Half-widths are `None` with fewer than two
/// repetitions.
pub fn window_mean_ci(records: &[RunRecord], start: SimTime, end: SimTime) -> Result<WindowStat, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    if records
        .iter()
        .any(|r| r.digest != first.digest || r.scheme != first.scheme || r.flows.len() != first.flows.len())
    {
        return Err(MetricsError::Mismatch);
    }
    let per_rep: Vec<Vec<f64>> = records
        .iter()
        .map(|r| (0..r.flows.len()).map(|i| r.window_throughput(i, start, end)).collect())
        .collect::<Result<_, _>>()?;

    let flows = first
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let samples: Vec<f64> = per_rep.iter().map(|rep| rep[i]).collect();
            let (mean_bps, ci95_bps) = mean_ci(&samples);
            FlowStat {
                flow: f.id,
                group: f.group.clone(),
                mean_bps,
                ci95_bps,
            }
        })
        .collect();

    let mut names: Vec<&str> = Vec::new();
    for f in &first.flows {
        if !names.contains(&f.group.as_str()) {
            names.push(&f.group);
        }
    }
    let groups = names
        .into_iter()
        .map(|g| {
            let members: Vec<usize> = (0..first.flows.len()).filter(|&i| first.flows[i].group == g).collect();
            let samples: Vec<f64> = per_rep
                .iter()
                .map(|rep| members.iter().map(|&i| rep[i]).sum::<f64>() / members.len() as f64)
                .collect();
            let (mean_bps, ci95_bps) = mean_ci(&samples);
            GroupStat {
                group: g.to_string(),
                mean_bps,
                ci95_bps,
            }
        })
        .collect();

    Ok(WindowStat {
        start,
        end,
        repetitions: records.len(),
        flows,
        groups,
    })
}

/// Ideal per-flow throughput over a window: conformant rate plus the
/// weighted fair share of the excess bandwidth. Only subscribers whose
/// source started by `start` count; a greedy TCP source offers the delivery
/// rate.
pub fn fair_shares(spec: &ScenarioSpec, start: SimTime) -> Vec<f64> {
    let capacity = spec.feeder_rate as f64;
    let offered: Vec<f64> = spec
        .subscribers
        .iter()
        .map(|s| {
            if s.start_time > start {
                return 0.0;
            }
            match s.source {
                SourceSpec::Udp { packet_length, period } => 8.0 * packet_length as f64 / period.as_secs_f64(),
                SourceSpec::Tcp => spec.delivery_rate() as f64,
            }
        })
        .collect();
    let conformant: Vec<f64> = spec
        .subscribers
        .iter()
        .zip(&offered)
        .map(|(s, o)| o.min(s.token_rate as f64))
        .collect();
    let excess = (capacity - conformant.iter().sum::<f64>()).max(0.0);
    let weights = spec.weights();
    let nonconformant: Vec<f64> = offered.iter().zip(&conformant).map(|(o, c)| o - c).collect();
    let alpha = solve_fair_rate(excess, &weights, &nonconformant).expect("weights and rates are valid");
    conformant
        .iter()
        .zip(&nonconformant)
        .zip(&weights)
        .map(|((c, r), w)| c + (w * alpha).min(*r))
        .collect()
}

/// Jain's fairness index of `x_i / w_i`.
pub fn jain_index(values: &[f64], weights: &[f64]) -> f64 {
    let norm: Vec<f64> = values.iter().zip(weights).map(|(x, w)| x / w).collect();
    let sum: f64 = norm.iter().sum();
    let sq: f64 = norm.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return 1.0;
    }
    sum * sum / (norm.len() as f64 * sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(bins: Vec<Vec<u64>>, resolution: SimTime) -> RunRecord {
        let n = bins[0].len();
        RunRecord {
            scheme: Scheme::DrrTbm,
            seed: 1,
            digest: "x".into(),
            horizon: SimTime::from_nanos(resolution.as_nanos() * n as u64),
            resolution,
            feeder_rate: 100_000_000,
            flows: bins
                .into_iter()
                .enumerate()
                .map(|(i, b)| FlowRecord {
                    id: i as u16,
                    group: if i < 2 { "a".into() } else { "b".into() },
                    token_rate: 1_000_000,
                    is_tcp: false,
                    start_time: SimTime::ZERO,
                    delivered_bins: b,
                    counters: FlowCounters::default(),
                    tcp: None,
                })
                .collect(),
            feeder_bins: vec![0; n],
            offered_bins: vec![0; n],
            csfq: None,
            events: 0,
        }
    }

    #[test]
    fn uniform_delivery_bins() {
        // 2000 B/s delivered uniformly in 100 ms bins
        let r = record(vec![vec![200; 50]], SimTime::from_millis(100));
        let s = bin_throughput(&r, SimTime::from_secs(1)).unwrap();
        assert_eq!(s[0].len(), 5);
        assert!(s[0].iter().all(|x| (*x - 16_000.0).abs() < 1e-9));
    }

    #[test]
    fn convergence_needs_a_full_window() {
        // 1 s bins: 0 B for 3 s, then 1250 B/s (10 kb/s) onwards.
        let mut bins = vec![0u64; 3];
        bins.extend([1250; 7]);
        let r = record(vec![bins], SimTime::from_secs(1));
        let t = |after, thr| r.convergence_time(0, SimTime::from_secs(after), SimTime::from_secs(2), thr).unwrap();
        assert_eq!(t(0, 10_000.0), Some(SimTime::from_secs(5)));
        assert_eq!(t(0, 5_000.0), Some(SimTime::from_secs(4)));
        assert_eq!(t(4, 10_000.0), Some(SimTime::from_secs(2)));
        assert_eq!(t(0, 10_001.0), None);
        assert_eq!(t(9, 1.0), None);
    }

    #[test]
    fn empty_bins_are_zero() {
        let r = record(vec![vec![0; 20]], SimTime::from_millis(100));
        assert_eq!(bin_throughput(&r, SimTime::from_secs(1)).unwrap()[0], vec![0.0, 0.0]);
    }

    #[test]
    fn bin_width_must_be_multiple() {
        let r = record(vec![vec![0; 20]], SimTime::from_millis(100));
        assert!(bin_throughput(&r, SimTime::from_millis(150)).is_err());
        assert!(bin_throughput(&r, SimTime::ZERO).is_err());
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(10).unwrap() - 2.262).abs() < 1e-3);
        assert!(t_quantile_975(1).is_none());
    }

    #[test]
    fn identical_reps_zero_width() {
        let r = record(vec![vec![100; 10], vec![50; 10], vec![10; 10]], SimTime::from_millis(100));
        let reps = vec![r.clone(), r.clone(), r];
        let w = window_mean_ci(&reps, SimTime::ZERO, SimTime::from_secs(1)).unwrap();
        assert_eq!(w.flows[0].ci95_bps, Some(0.0));
        assert!((w.flows[0].mean_bps - 8000.0).abs() < 1e-9);
        assert!((w.group("a").unwrap().mean_bps - 6000.0).abs() < 1e-9);
    }

    #[test]
    fn ci_matches_student_t() {
        let samples: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (mean, half) = mean_ci(&samples);
        let s = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((half.unwrap() - 2.262 * s / 10f64.sqrt()).abs() < 1e-3 * s);
        assert!(mean_ci(&[1.0]).1.is_none());
    }

    #[test]
    fn window_outside_horizon_rejected() {
        let r = record(vec![vec![1; 10]], SimTime::from_millis(100));
        assert!(r.window_throughput(0, SimTime::ZERO, SimTime::from_secs(2)).is_err());
        assert!(r.window_throughput(0, SimTime::from_millis(500), SimTime::from_millis(500)).is_err());
    }

    #[test]
    fn reference_fair_shares() {
        let spec = ScenarioSpec::reference(Scheme::DrrTbm);
        let udp = fair_shares(&spec, SimTime::from_secs(130));
        for (i, expected) in [4.1667e6, 8.3333e6, 12.5e6, 0.0].iter().enumerate() {
            assert!((udp[4 * i] - expected).abs() < 100.0, "{udp:?}");
        }
        let mixed = fair_shares(&spec, SimTime::from_secs(190));
        for (i, expected) in [2.5e6, 5e6, 7.5e6, 10e6].iter().enumerate() {
            assert!((mixed[4 * i] - expected).abs() < 1e-6, "{mixed:?}");
        }
        let early = fair_shares(&spec, SimTime::from_secs(10));
        assert!((early[0] - 16e6).abs() < 1e-6);
    }

    #[test]
    fn jain() {
        assert!((jain_index(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!(jain_index(&[1.0, 0.0], &[1.0, 1.0]) < 0.51);
    }
}
