//! Traffic sources and sinks: constant-bit-rate UDP and a Reno-style greedy
//! TCP sender with its cumulative-ACK receiver.

use std::collections::BTreeSet;

use crate::packet::{FlowId, Packet, PacketKind};
use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct UdpSource {
    flow: FlowId,
    packet_length: u32,
    period: SimTime,
    start_time: SimTime,
    next_seq: u64,
}

impl UdpSource {
    pub fn new(flow: FlowId, packet_length: u32, period: SimTime, start_time: SimTime) -> Self {
        assert!(packet_length > 0 && period > SimTime::ZERO);
        Self {
            flow,
            packet_length,
            period,
            start_time,
            next_seq: 0,
        }
    }

    pub fn start_time(&self) -> SimTime {
        self.start_time
    }

    pub fn period(&self) -> SimTime {
        self.period
    }

    pub fn rate_bps(&self) -> f64 {
        8.0 * self.packet_length as f64 / self.period.as_secs_f64()
    }

    /// Emission time of the next packet.
    pub fn next_emission(&self) -> SimTime {
        self.start_time + SimTime::from_nanos(self.period.as_nanos() * self.next_seq)
    }

    /// Packets emitted in `[start_time, t]`.
    pub fn emissions_by(&self, t: SimTime) -> u64 {
        if t < self.start_time {
            0
        } else {
            (t - self.start_time).as_nanos() / self.period.as_nanos() + 1
        }
    }

    pub fn emit(&mut self, now: SimTime) -> Packet {
        debug_assert_eq!(now, self.next_emission());
        let p = Packet::new(self.flow, self.packet_length, self.next_seq, PacketKind::UdpData, now);
        self.next_seq += 1;
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcpConfig {
    pub segment_length: u32,
    pub ack_length: u32,
    pub initial_cwnd: f64,
    pub initial_ssthresh: f64,
    /// Receiver window in segments.
    pub max_window: f64,
    pub min_rto: SimTime,
    pub max_rto: SimTime,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            segment_length: 1000,
            ack_length: 64,
            initial_cwnd: 1.0,
            initial_ssthresh: 1e9,
            max_window: 1e9,
            min_rto: SimTime::from_millis(200),
            max_rto: SimTime::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    SlowStart,
    CongAvoid,
    FastRecovery,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TcpStats {
    pub segments_sent: u64,
    pub retransmits: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

/// Greedy sender. Segments are numbered from 0; an ACK carries the next
/// segment the receiver expects.
#[derive(Debug, Clone)]
pub struct TcpSource {
    flow: FlowId,
    cfg: TcpConfig,
    state: TcpState,
    cwnd: f64,
    ssthresh: f64,
    next_seg: u64,
    high_seg: u64,
    snd_una: u64,
    dup_acks: u32,
    recover: u64,
    partial_seen: bool,
    srtt: Option<f64>,
    backoff: u32,
    next_tx: u64,
    timer: Option<SimTime>,
    timer_generation: u64,
    stats: TcpStats,
}

impl TcpSource {
    pub fn new(flow: FlowId, cfg: TcpConfig) -> Self {
        let cwnd = cfg.initial_cwnd.max(1.0);
        let ssthresh = cfg.initial_ssthresh;
        Self {
            flow,
            cfg,
            state: TcpState::SlowStart,
            cwnd,
            ssthresh,
            next_seg: 0,
            high_seg: 0,
            snd_una: 0,
            dup_acks: 0,
            recover: 0,
            partial_seen: false,
            srtt: None,
            backoff: 0,
            next_tx: 0,
            timer: None,
            timer_generation: 0,
            stats: TcpStats::default(),
        }
    }

    pub fn flow(&self) -> FlowId {
        self.flow
    }

    pub fn state(&self) -> TcpState {
        self.state
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn in_flight(&self) -> u64 {
        self.next_seg - self.snd_una
    }

    pub fn stats(&self) -> &TcpStats {
        &self.stats
    }

    /// Retransmission timer: deadline and a generation that changes every
    /// time the timer is re-armed or stopped.
    pub fn timer(&self) -> (Option<SimTime>, u64) {
        (self.timer, self.timer_generation)
    }

    pub fn rto(&self) -> SimTime {
        let base = match self.srtt {
            Some(srtt) => SimTime::from_secs_f64(2.0 * srtt).max(self.cfg.min_rto),
            None => SimTime::from_secs(1).max(self.cfg.min_rto),
        };
        let scaled = SimTime::from_nanos(base.as_nanos().saturating_mul(1u64 << self.backoff.min(20)));
        scaled.min(self.cfg.max_rto)
    }

    /// Forces the congestion state. Meant for tests and warm starts.
    pub fn set_window(&mut self, cwnd: f64, ssthresh: f64, state: TcpState) {
        self.cwnd = cwnd.max(1.0);
        self.ssthresh = ssthresh;
        self.state = state;
    }

    fn window(&self) -> u64 {
        self.cwnd.min(self.cfg.max_window).floor().max(1.0) as u64
    }

    fn arm_timer(&mut self, now: SimTime) {
        self.timer = Some(now + self.rto());
        self.timer_generation += 1;
    }

    fn stop_timer(&mut self) {
        if self.timer.is_some() {
            self.timer = None;
            self.timer_generation += 1;
        }
    }

    fn segment(&mut self, segment: u64, now: SimTime) -> Packet {
        let mut p = Packet::new(self.flow, self.cfg.segment_length, self.next_tx, PacketKind::TcpData, now);
        p.segment = segment;
        self.next_tx += 1;
        self.stats.segments_sent += 1;
        if segment < self.high_seg {
            self.stats.retransmits += 1;
        }
        p
    }

    fn fill_window(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        while self.in_flight() < self.window() {
            let seg = self.next_seg;
            out.push(self.segment(seg, now));
            self.next_seg += 1;
            self.high_seg = self.high_seg.max(self.next_seg);
        }
        if self.in_flight() > 0 && self.timer.is_none() {
            self.arm_timer(now);
        }
    }

    /// Opens the connection: sends the initial window.
    pub fn start(&mut self, now: SimTime) -> Vec<Packet> {
        let mut out = Vec::new();
        self.fill_window(now, &mut out);
        out
    }

    pub fn on_ack(&mut self, ack: &Packet, now: SimTime) -> Vec<Packet> {
        debug_assert_eq!(ack.flow, self.flow);
        debug_assert_eq!(ack.kind, PacketKind::TcpAck);
        let mut out = Vec::new();
        let ackno = ack.segment;
        if ackno > self.snd_una {
            let sample = now.saturating_sub(ack.echo).as_secs_f64();
            self.srtt = Some(match self.srtt {
                Some(s) => 0.875 * s + 0.125 * sample,
                None => sample,
            });
            self.backoff = 0;
            let newly = (ackno - self.snd_una) as f64;
            self.snd_una = ackno;
            self.next_seg = self.next_seg.max(ackno);
            self.dup_acks = 0;
            match self.state {
                TcpState::FastRecovery if ackno >= self.recover => {
                    self.cwnd = self.ssthresh;
                    self.state = TcpState::CongAvoid;
                }
                TcpState::FastRecovery => {
                    // partial ACK: the next hole is lost too
                    let seg = self.snd_una;
                    out.push(self.segment(seg, now));
                    self.cwnd = (self.cwnd - newly + 1.0).max(1.0);
                    // impatient variant: only the first partial ACK rearms
                    // the timer, so long loss bursts end in a timeout
                    if !self.partial_seen {
                        self.partial_seen = true;
                        self.stop_timer();
                    }
                    self.fill_window(now, &mut out);
                    return out;
                }
                _ => {
                    if self.cwnd < self.ssthresh {
                        self.cwnd += 1.0;
                    } else {
                        self.cwnd += 1.0 / self.cwnd;
                    }
                    self.state = if self.cwnd < self.ssthresh {
                        TcpState::SlowStart
                    } else {
                        TcpState::CongAvoid
                    };
                }
            }
            self.stop_timer();
        } else if ackno == self.snd_una && self.in_flight() > 0 {
            self.dup_acks += 1;
            if self.state == TcpState::FastRecovery {
                self.cwnd += 1.0;
            } else if self.dup_acks == 3 {
                self.ssthresh = (self.cwnd / 2.0).max(2.0);
                self.cwnd = self.ssthresh;
                self.recover = self.next_seg;
                self.partial_seen = false;
                self.state = TcpState::FastRecovery;
                self.stats.fast_retransmits += 1;
                let seg = self.snd_una;
                out.push(self.segment(seg, now));
                self.stop_timer();
            }
        }
        self.fill_window(now, &mut out);
        out
    }

    /// Retransmission timeout: collapse to one segment and go back to the
    /// oldest unacknowledged segment.
    pub fn on_timeout(&mut self, now: SimTime) -> Vec<Packet> {
        self.stats.timeouts += 1;
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.state = TcpState::SlowStart;
        self.dup_acks = 0;
        self.recover = self.next_seg;
        self.next_seg = self.snd_una;
        self.backoff += 1;
        self.timer = None;
        self.timer_generation += 1;
        let mut out = Vec::new();
        self.fill_window(now, &mut out);
        out
    }
}

/// Receiver: one ACK per data segment, carrying the next expected segment.
#[derive(Debug, Clone)]
pub struct TcpSink {
    flow: FlowId,
    ack_length: u32,
    expected: u64,
    out_of_order: BTreeSet<u64>,
    next_ack_seq: u64,
    duplicates: u64,
}

impl TcpSink {
    pub fn new(flow: FlowId, ack_length: u32) -> Self {
        Self {
            flow,
            ack_length,
            expected: 0,
            out_of_order: BTreeSet::new(),
            next_ack_seq: 0,
            duplicates: 0,
        }
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    /// Segments received that had already been delivered.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn on_data(&mut self, p: &Packet, now: SimTime) -> Packet {
        debug_assert_eq!(p.kind, PacketKind::TcpData);
        let seg = p.segment;
        if seg == self.expected {
            self.expected += 1;
            while self.out_of_order.remove(&self.expected) {
                self.expected += 1;
            }
        } else if seg > self.expected {
            if !self.out_of_order.insert(seg) {
                self.duplicates += 1;
            }
        } else {
            self.duplicates += 1;
        }
        let mut ack = Packet::new(self.flow, self.ack_length, self.next_ack_seq, PacketKind::TcpAck, now);
        ack.segment = self.expected;
        ack.echo = p.created_at;
        self.next_ack_seq += 1;
        ack
    }
}
