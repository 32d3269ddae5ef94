use crate::time::SimTime;

/// Subscriber index, `0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u16);

impl FlowId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    UdpData,
    TcpData,
    TcpAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conformance {
    Unmetered,
    Conformant,
    NonConformant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow: FlowId,
    /// Bytes, always positive.
    pub length: u32,
    /// Per-(flow, kind) transmission counter. Retransmissions get a fresh one.
    pub seq_no: u64,
    pub kind: PacketKind,
    pub conformance: Conformance,
    pub created_at: SimTime,
    /// TCP segment index for data, cumulative ack (next expected) for ACKs.
    pub segment: u64,
    /// Send time of the data segment an ACK acknowledges.
    pub echo: SimTime,
}

impl Packet {
    pub fn new(flow: FlowId, length: u32, seq_no: u64, kind: PacketKind, created_at: SimTime) -> Self {
        assert!(length > 0, "packet length must be positive");
        Packet {
            flow,
            length,
            seq_no,
            kind,
            conformance: Conformance::Unmetered,
            created_at,
            segment: 0,
            echo: SimTime::ZERO,
        }
    }

    pub fn bits(&self) -> f64 {
        8.0 * self.length as f64
    }

    pub fn is_data(&self) -> bool {
        self.kind != PacketKind::TcpAck
    }
}
