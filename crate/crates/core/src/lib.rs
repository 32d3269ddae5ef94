//! Deterministic discrete-event simulator of a shared access network with
//! per-subscriber token-bucket metering and three feeder-link traffic
//! control schemes:
//!
//! * `drr-tbm`: conformant traffic in a strict-priority FIFO, non-conformant
//!   traffic in per-subscriber queues served by weighted deficit round-robin.
//! * `csfq1-tbm`: weighted core-stateless fair queueing in front of one
//!   common FIFO, with probabilistic dropping of non-conformant packets.
//! * `csfq2-tbm`: the same, plus the buffer-based amendment of the fair rate.
//!
//! The [`engine::run`] entry point executes one repetition of a
//! [`scenario::ScenarioSpec`] and returns a [`metrics::RunRecord`].

pub mod csfq;
pub mod drr;
pub mod engine;
pub mod estimator;
pub mod experiment;
pub mod meter;
pub mod metrics;
pub mod packet;
pub mod rng;
pub mod scenario;
pub mod time;
pub mod traffic;

pub use csfq::{solve_fair_rate, CsfqController, FifoQueue};
pub use drr::DrrScheduler;
pub use engine::run;
pub use estimator::ExpAvgEstimator;
pub use meter::TokenBucketMeter;
pub use metrics::{RunRecord, WindowStat};
pub use packet::{Conformance, FlowId, Packet, PacketKind};
pub use rng::SimRng;
pub use scenario::{Scheme, ScenarioSpec, SourceSpec, SubscriberSpec};
pub use time::SimTime;

/// One bit per second; all rates in this crate are expressed in bits/s.
pub const MBPS: f64 = 1e6;
