//! Event loop and topology.
//!
//! ```text
//! server --backbone--> access switch --feeder--> distribution switch --port/UNI--> subscriber
//!    ^                 (meter + scheme)                                             |
//!    +--------------------------- ACKs, pure delay of rtt/2 ------------------------+
//! ```
//!
//! The scheme under test is the only place packets can be dropped. Every
//! other hop is an unbounded FIFO with serialization and propagation delay.
//! Events execute in `(time, insertion sequence)` order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::csfq::{Admission, Amendment, CsfqConfig, CsfqController, FifoQueue};
use crate::drr::{DrrScheduler, Enqueue};
use crate::meter::TokenBucketMeter;
use crate::metrics::{FlowCounters, FlowRecord, RunRecord};
use crate::packet::{Conformance, FlowId, Packet, PacketKind};
use crate::rng::{stream, SimRng};
use crate::scenario::{ScenarioErrors, ScenarioSpec, Scheme, SourceSpec, ACCESS_DELAY};
use crate::time::SimTime;
use crate::traffic::{TcpSink, TcpSource, UdpSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkId {
    Backbone,
    Feeder,
    Port(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Access,
    Distribution,
    Subscriber(u16),
}

#[derive(Debug)]
enum Action {
    UdpEmit(u16),
    TcpStart(u16),
    TcpTimer(u16),
    LinkDone(LinkId),
    Arrive(Node, Packet),
    AckArrive(Packet),
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap: invert so the earliest event pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Link {
    rate: u64,
    delay: SimTime,
    busy: bool,
}

impl Link {
    fn new(rate: u64, delay: SimTime) -> Self {
        Link { rate, delay, busy: false }
    }
}

enum Discipline {
    Csfq {
        ctl: Box<CsfqController>,
        fifo: FifoQueue,
        rng: SimRng,
    },
    Drr(DrrScheduler),
}

impl Discipline {
    fn next(&mut self) -> Option<Packet> {
        match self {
            Discipline::Csfq { fifo, .. } => fifo.pop(),
            Discipline::Drr(s) => s.dequeue(),
        }
    }

    fn packets(&self) -> Box<dyn Iterator<Item = &Packet> + '_> {
        match self {
            Discipline::Csfq { fifo, .. } => Box::new(fifo.iter()),
            Discipline::Drr(s) => Box::new(s.iter()),
        }
    }
}

enum Source {
    Udp(UdpSource),
    Tcp { src: TcpSource, sink: TcpSink, pending_timer: Option<SimTime> },
}

/// Observer hooks for tests that need per-packet visibility.
pub trait Probe {
    /// A data packet reached its subscriber.
    fn delivered(&mut self, _now: SimTime, _p: &Packet) {}
    /// A packet started transmission on the feeder.
    fn feeder_tx(&mut self, _now: SimTime, _p: &Packet, _queued_bytes: u64) {}
}

struct NoProbe;
impl Probe for NoProbe {}

struct Sim<'a, P: Probe> {
    spec: &'a ScenarioSpec,
    probe: &'a mut P,
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Scheduled>,
    events: u64,
    backbone: Link,
    backbone_q: VecDeque<Packet>,
    feeder: Link,
    discipline: Discipline,
    ports: Vec<Link>,
    port_q: Vec<VecDeque<Packet>>,
    reverse_delay: SimTime,
    meters: Vec<TokenBucketMeter>,
    sources: Vec<Source>,
    counters: Vec<FlowCounters>,
    last_delivered: Vec<Option<u64>>,
    delivered_bins: Vec<Vec<u64>>,
    feeder_bins: Vec<u64>,
    offered_bins: Vec<u64>,
}

/// Runs one repetition with `spec.seed`.
pub fn run(spec: &ScenarioSpec) -> Result<RunRecord, ScenarioErrors> {
    run_with_probe(spec, &mut NoProbe)
}

pub fn run_with_probe<P: Probe>(spec: &ScenarioSpec, probe: &mut P) -> Result<RunRecord, ScenarioErrors> {
    spec.validate()?;
    Ok(Sim::new(spec, probe).execute())
}

impl<'a, P: Probe> Sim<'a, P> {
    fn new(spec: &'a ScenarioSpec, probe: &'a mut P) -> Self {
        let n = spec.subscribers.len();
        let root = SimRng::new(spec.seed);
        let weights = spec.weights();
        let discipline = match spec.scheme {
            Scheme::DrrTbm => Discipline::Drr(DrrScheduler::new(&weights, spec.drr_conformant_queue, spec.drr_queue)),
            Scheme::Csfq1Tbm | Scheme::Csfq2Tbm => {
                let amendment = (spec.scheme == Scheme::Csfq2Tbm).then_some(Amendment {
                    threshold_bytes: spec.amendment_threshold,
                    factor: spec.amendment_factor,
                });
                let config = CsfqConfig {
                    capacity_bps: spec.feeder_rate as f64,
                    k: spec.k,
                    k_alpha: spec.k_alpha,
                    amendment,
                };
                Discipline::Csfq {
                    ctl: Box::new(CsfqController::new(config, weights)),
                    fifo: FifoQueue::new(spec.csfq_fifo),
                    rng: root.fork(stream::CSFQ_DROP),
                }
            }
        };
        let half_access = SimTime::from_nanos(ACCESS_DELAY.as_nanos() / 2);
        let bins = spec.horizon.as_nanos().div_ceil(spec.resolution.as_nanos()) as usize;
        let mut sim = Sim {
            spec,
            probe,
            now: SimTime::ZERO,
            seq: 0,
            heap: BinaryHeap::new(),
            events: 0,
            backbone: Link::new(spec.backbone_rate, spec.backbone_delay()),
            backbone_q: VecDeque::new(),
            feeder: Link::new(spec.feeder_rate, half_access),
            discipline,
            ports: (0..n)
                .map(|_| Link::new(spec.delivery_rate(), ACCESS_DELAY - half_access))
                .collect(),
            port_q: vec![VecDeque::new(); n],
            reverse_delay: spec.reverse_delay(),
            meters: spec
                .subscribers
                .iter()
                .map(|s| TokenBucketMeter::new(s.token_rate as f64, s.bucket_size, SimTime::ZERO))
                .collect(),
            sources: Vec::with_capacity(n),
            counters: vec![FlowCounters::default(); n],
            last_delivered: vec![None; n],
            delivered_bins: vec![vec![0; bins]; n],
            feeder_bins: vec![0; bins],
            offered_bins: vec![0; bins],
        };

        let mut jitter_rng = root.fork(stream::TCP_START_JITTER);
        let tcp = spec.tcp_config();
        for (i, s) in spec.subscribers.iter().enumerate() {
            let flow = FlowId(i as u16);
            match s.source {
                SourceSpec::Udp { packet_length, period } => {
                    sim.sources.push(Source::Udp(UdpSource::new(flow, packet_length, period, s.start_time)));
                    sim.schedule(s.start_time, Action::UdpEmit(i as u16));
                }
                SourceSpec::Tcp => {
                    sim.sources.push(Source::Tcp {
                        src: TcpSource::new(flow, tcp.clone()),
                        sink: TcpSink::new(flow, tcp.ack_length),
                        pending_timer: None,
                    });
                    let jitter = if spec.tcp_start_jitter > SimTime::ZERO {
                        SimTime::from_secs_f64(jitter_rng.uniform() * spec.tcp_start_jitter.as_secs_f64())
                    } else {
                        SimTime::ZERO
                    };
                    sim.schedule(s.start_time + jitter, Action::TcpStart(i as u16));
                }
            }
        }
        sim
    }

    fn schedule(&mut self, at: SimTime, action: Action) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        if at >= self.spec.horizon {
            // Packets scheduled past the horizon still count as in flight.
            if let Action::Arrive(_, p) = &action {
                if p.is_data() {
                    self.counters[p.flow.index()].in_flight.add(p.length);
                }
            }
            return;
        }
        self.heap.push(Scheduled {
            at,
            seq: self.seq,
            action,
        });
        self.seq += 1;
    }

    fn bin(&self, t: SimTime) -> usize {
        (t.as_nanos() / self.spec.resolution.as_nanos()) as usize
    }

    fn execute(mut self) -> RunRecord {
        while let Some(ev) = self.heap.pop() {
            debug_assert!(ev.at >= self.now);
            self.now = ev.at;
            self.events += 1;
            match ev.action {
                Action::UdpEmit(flow) => self.on_udp_emit(flow),
                Action::TcpStart(flow) => self.on_tcp_start(flow),
                Action::TcpTimer(flow) => self.on_tcp_timer(flow),
                Action::LinkDone(link) => self.on_link_done(link),
                Action::Arrive(node, p) => self.on_arrive(node, p),
                Action::AckArrive(ack) => self.on_ack(ack),
            }
        }
        self.finish()
    }

    fn start_tx(&mut self, link: LinkId, p: Packet) {
        let (rate, delay, next) = match link {
            LinkId::Backbone => (self.backbone.rate, self.backbone.delay, Node::Access),
            LinkId::Feeder => (self.feeder.rate, self.feeder.delay, Node::Distribution),
            LinkId::Port(i) => {
                let l = &self.ports[i as usize];
                (l.rate, l.delay, Node::Subscriber(i))
            }
        };
        let tx = SimTime::transmission(p.length as u64, rate);
        let done = self.now + tx;
        match link {
            LinkId::Backbone => self.backbone.busy = true,
            LinkId::Feeder => {
                self.feeder.busy = true;
                let b = self.bin(done);
                if b < self.feeder_bins.len() {
                    self.feeder_bins[b] += p.length as u64;
                }
            }
            LinkId::Port(i) => self.ports[i as usize].busy = true,
        }
        self.schedule(done, Action::LinkDone(link));
        self.schedule(done + delay, Action::Arrive(next, p));
    }

    fn send_backbone(&mut self, p: Packet) {
        self.counters[p.flow.index()].sent.add(p.length);
        if self.backbone.busy {
            self.backbone_q.push_back(p);
        } else {
            self.start_tx(LinkId::Backbone, p);
        }
    }

    fn kick_feeder(&mut self) {
        if self.feeder.busy {
            return;
        }
        if let Some(p) = self.discipline.next() {
            let queued = match &self.discipline {
                Discipline::Csfq { fifo, .. } => fifo.occupancy(),
                Discipline::Drr(s) => s.occupancy(),
            };
            self.probe.feeder_tx(self.now, &p, queued);
            self.start_tx(LinkId::Feeder, p);
        }
    }

    fn on_link_done(&mut self, link: LinkId) {
        match link {
            LinkId::Backbone => {
                self.backbone.busy = false;
                if let Some(p) = self.backbone_q.pop_front() {
                    self.start_tx(link, p);
                }
            }
            LinkId::Feeder => {
                self.feeder.busy = false;
                self.kick_feeder();
            }
            LinkId::Port(i) => {
                self.ports[i as usize].busy = false;
                if let Some(p) = self.port_q[i as usize].pop_front() {
                    self.start_tx(link, p);
                }
            }
        }
    }

    fn on_arrive(&mut self, node: Node, p: Packet) {
        match node {
            Node::Access => self.on_access(p),
            Node::Distribution => {
                let i = p.flow.0;
                if self.ports[i as usize].busy {
                    self.port_q[i as usize].push_back(p);
                } else {
                    self.start_tx(LinkId::Port(i), p);
                }
            }
            Node::Subscriber(i) => self.on_deliver(i, p),
        }
    }

    fn on_access(&mut self, mut p: Packet) {
        let flow = p.flow.index();
        let len = p.length;
        let b = self.bin(self.now);
        self.offered_bins[b] += len as u64;
        let verdict = self.meters[flow].meter(&mut p, self.now);
        let c = &mut self.counters[flow];
        match verdict {
            Conformance::Conformant => c.marked_conformant.add(len),
            _ => c.marked_nonconformant.add(len),
        }
        let outcome = match &mut self.discipline {
            Discipline::Csfq { ctl, fifo, rng } => ctl.on_packet(fifo, p, self.now, rng),
            Discipline::Drr(s) => match s.enqueue(p) {
                Enqueue::Enqueued => Admission::Enqueued,
                Enqueue::DroppedOverflow => Admission::DroppedOverflow,
            },
        };
        let c = &mut self.counters[flow];
        match (outcome, verdict) {
            (Admission::Enqueued, _) => {}
            (Admission::DroppedProb, _) => c.dropped_prob.add(len),
            (Admission::DroppedOverflow, Conformance::Conformant) => c.dropped_overflow_conformant.add(len),
            (Admission::DroppedOverflow, _) => c.dropped_overflow_nonconformant.add(len),
        }
        self.kick_feeder();
    }

    fn on_deliver(&mut self, i: u16, p: Packet) {
        let flow = i as usize;
        self.probe.delivered(self.now, &p);
        let c = &mut self.counters[flow];
        match p.conformance {
            Conformance::Conformant => c.delivered_conformant.add(p.length),
            _ => c.delivered_nonconformant.add(p.length),
        }
        match self.last_delivered[flow] {
            Some(last) if p.seq_no < last => c.inversions += 1,
            _ => self.last_delivered[flow] = Some(p.seq_no),
        }
        let b = self.bin(self.now);
        self.delivered_bins[flow][b] += p.length as u64;
        if p.kind == PacketKind::TcpData {
            if let Source::Tcp { sink, .. } = &mut self.sources[flow] {
                let ack = sink.on_data(&p, self.now);
                let at = self.now + self.reverse_delay;
                self.schedule(at, Action::AckArrive(ack));
            }
        }
    }

    fn on_udp_emit(&mut self, flow: u16) {
        let Source::Udp(src) = &mut self.sources[flow as usize] else {
            unreachable!("UDP event for a TCP flow")
        };
        let p = src.emit(self.now);
        let next = src.next_emission();
        self.send_backbone(p);
        self.schedule(next, Action::UdpEmit(flow));
    }

    fn tcp_send(&mut self, flow: u16, out: Vec<Packet>) {
        for p in out {
            self.send_backbone(p);
        }
        let now = self.now;
        let Source::Tcp { src, pending_timer, .. } = &mut self.sources[flow as usize] else {
            unreachable!()
        };
        if let (Some(deadline), _) = src.timer() {
            if pending_timer.is_none_or(|t| deadline < t) {
                *pending_timer = Some(deadline.max(now));
                self.schedule(deadline.max(now), Action::TcpTimer(flow));
            }
        }
    }

    fn on_tcp_start(&mut self, flow: u16) {
        let now = self.now;
        let Source::Tcp { src, .. } = &mut self.sources[flow as usize] else {
            unreachable!()
        };
        let out = src.start(now);
        self.tcp_send(flow, out);
    }

    fn on_ack(&mut self, ack: Packet) {
        let flow = ack.flow.0;
        let now = self.now;
        let Source::Tcp { src, .. } = &mut self.sources[flow as usize] else {
            unreachable!()
        };
        let out = src.on_ack(&ack, now);
        self.tcp_send(flow, out);
    }

    fn on_tcp_timer(&mut self, flow: u16) {
        let now = self.now;
        let Source::Tcp { src, pending_timer, .. } = &mut self.sources[flow as usize] else {
            unreachable!()
        };
        if *pending_timer == Some(now) {
            *pending_timer = None;
        }
        let out = match src.timer() {
            (Some(deadline), _) if deadline <= now => src.on_timeout(now),
            _ => Vec::new(),
        };
        self.tcp_send(flow, out);
    }

    fn finish(mut self) -> RunRecord {
        let mut leftovers: Vec<(usize, u32)> = Vec::new();
        for ev in self.heap.iter() {
            if let Action::Arrive(_, p) = &ev.action {
                if p.is_data() {
                    leftovers.push((p.flow.index(), p.length));
                }
            }
        }
        let queued = self
            .backbone_q
            .iter()
            .chain(self.port_q.iter().flatten())
            .chain(self.discipline.packets())
            .map(|p| (p.flow.index(), p.length));
        leftovers.extend(queued);
        for (flow, len) in leftovers {
            self.counters[flow].in_flight.add(len);
        }

        let csfq = match &self.discipline {
            Discipline::Csfq { ctl, .. } => Some(ctl.stats().clone()),
            Discipline::Drr(_) => None,
        };
        let flows = self
            .spec
            .subscribers
            .iter()
            .zip(self.counters)
            .zip(self.delivered_bins)
            .zip(&self.sources)
            .map(|(((s, counters), delivered_bins), source)| FlowRecord {
                id: s.id,
                group: s.group.clone(),
                token_rate: s.token_rate,
                is_tcp: matches!(s.source, SourceSpec::Tcp),
                start_time: s.start_time,
                delivered_bins,
                counters,
                tcp: match source {
                    Source::Tcp { src, .. } => Some(src.stats().clone()),
                    Source::Udp(_) => None,
                },
            })
            .collect();
        RunRecord {
            scheme: self.spec.scheme,
            seed: self.spec.seed,
            digest: self.spec.digest(),
            horizon: self.spec.horizon,
            resolution: self.spec.resolution,
            feeder_rate: self.spec.feeder_rate,
            flows,
            feeder_bins: self.feeder_bins,
            offered_bins: self.offered_bins,
            csfq,
            events: self.events,
        }
    }
}
