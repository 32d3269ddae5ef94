//! Reference scheme: strict priority for conformant packets over weighted
//! deficit round-robin among per-subscriber non-conformant queues.

use std::collections::VecDeque;

use crate::csfq::FifoQueue;
use crate::packet::{Conformance, Packet};

/// Quantum given to the lowest-weight subscriber; at least one MTU.
pub const BASE_QUANTUM: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    Enqueued,
    DroppedOverflow,
}

#[derive(Debug, Clone)]
pub struct DrrScheduler {
    conformant: FifoQueue,
    queues: Vec<FifoQueue>,
    quanta: Vec<f64>,
    deficits: Vec<f64>,
    active: VecDeque<usize>,
    /// Whether the head of `active` already received its quantum this round.
    visit_open: bool,
}

impl DrrScheduler {
    pub fn new(weights: &[f64], conformant_capacity: u64, queue_capacity: u64) -> Self {
        assert!(!weights.is_empty());
        assert!(weights.iter().all(|w| *w > 0.0), "weights must be positive");
        let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            conformant: FifoQueue::new(conformant_capacity),
            queues: weights.iter().map(|_| FifoQueue::new(queue_capacity)).collect(),
            quanta: weights.iter().map(|w| BASE_QUANTUM * w / min).collect(),
            deficits: vec![0.0; weights.len()],
            active: VecDeque::new(),
            visit_open: false,
        }
    }

    pub fn quanta(&self) -> &[f64] {
        &self.quanta
    }

    pub fn deficit(&self, flow: usize) -> f64 {
        self.deficits[flow]
    }

    pub fn conformant_queue(&self) -> &FifoQueue {
        &self.conformant
    }

    pub fn queue(&self, flow: usize) -> &FifoQueue {
        &self.queues[flow]
    }

    pub fn is_empty(&self) -> bool {
        self.conformant.is_empty() && self.active.is_empty()
    }

    pub fn len(&self) -> usize {
        self.conformant.len() + self.queues.iter().map(FifoQueue::len).sum::<usize>()
    }

    pub fn occupancy(&self) -> u64 {
        self.conformant.occupancy() + self.queues.iter().map(FifoQueue::occupancy).sum::<u64>()
    }

    pub fn enqueue(&mut self, p: Packet) -> Enqueue {
        match p.conformance {
            Conformance::Conformant => match self.conformant.push(p) {
                Ok(()) => Enqueue::Enqueued,
                Err(_) => Enqueue::DroppedOverflow,
            },
            Conformance::NonConformant => {
                let flow = p.flow.index();
                let was_empty = self.queues[flow].is_empty();
                match self.queues[flow].push(p) {
                    Ok(()) => {
                        if was_empty {
                            self.active.push_back(flow);
                        }
                        Enqueue::Enqueued
                    }
                    Err(_) => Enqueue::DroppedOverflow,
                }
            }
            Conformance::Unmetered => panic!("packet reached the scheduler without a conformance verdict"),
        }
    }

    /// Next packet for the feeder, one packet at a time so that conformant
    /// arrivals preempt at packet granularity.
    pub fn dequeue(&mut self) -> Option<Packet> {
        if let Some(p) = self.conformant.pop() {
            return Some(p);
        }
        loop {
            let flow = *self.active.front()?;
            if !self.visit_open {
                self.deficits[flow] += self.quanta[flow];
                self.visit_open = true;
            }
            let head = self.queues[flow].front().expect("active queue is backlogged").length as f64;
            if head <= self.deficits[flow] {
                let p = self.queues[flow].pop().expect("head exists");
                self.deficits[flow] -= head;
                if self.queues[flow].is_empty() {
                    self.deficits[flow] = 0.0;
                    self.active.pop_front();
                    self.visit_open = false;
                }
                return Some(p);
            }
            self.active.rotate_left(1);
            self.visit_open = false;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.conformant.iter().chain(self.queues.iter().flat_map(FifoQueue::iter))
    }
}
