//! Traffic control disciplines for the shared access link.

mod csfq_tbm;
mod drr_tbm;
mod rr_tbf;

pub use csfq_tbm::{
    csfq_drop_probability, AlphaEstimator, CsfqConfig, CsfqTbm, FlowRateEstimator, SharedFifo,
};
pub use drr_tbm::{set_quanta, DrrSubscriberConfig, DrrTbm, QuantaError, SubscriberState};
pub use rr_tbf::{RrTbf, ShapedQueue};

use crate::types::{Nanos, Packet};

/// Why an arriving packet was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropCause {
    /// Per-subscriber queue full, packet non-conformant.
    OverflowNonconformant,
    /// Per-subscriber queue full, conformant packet with no non-conformant
    /// bytes left to preempt.
    OverflowConformantNoSwap,
    /// Conformant packet discarded while its bytes were moved from the
    /// non-conformant to the conformant budget.
    Swap,
    /// Plain tail drop (shaper queue or shared FIFO full).
    TailDrop,
    /// Probabilistic fair-share drop of a non-conformant packet.
    Csfq,
    /// Larger than the bucket depth; could never conform.
    Oversize,
}

impl DropCause {
    pub const ALL: [DropCause; 6] = [
        DropCause::OverflowNonconformant,
        DropCause::OverflowConformantNoSwap,
        DropCause::Swap,
        DropCause::TailDrop,
        DropCause::Csfq,
        DropCause::Oversize,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropCause::OverflowNonconformant => "overflow_nonconformant",
            DropCause::OverflowConformantNoSwap => "overflow_conformant_noswap",
            DropCause::Swap => "swap",
            DropCause::TailDrop => "tail_drop",
            DropCause::Csfq => "csfq",
            DropCause::Oversize => "oversize",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped(DropCause),
}

impl EnqueueOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, EnqueueOutcome::Accepted)
    }
}

/// Result of asking a discipline for the next packet to transmit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dequeue {
    Packet(Packet),
    /// Packets are queued but none may leave before the given time.
    WaitUntil(Nanos),
    Empty,
}

/// A traffic control discipline in front of the access link.
///
/// The engine calls `enqueue` for every arriving packet and `dequeue` when
/// the link becomes free; calls are never interleaved or re-entered.
pub trait Discipline: Send {
    /// Meters (or shapes) and queues `pkt`. The discipline records its
    /// conformance verdict in `pkt.conformant`.
    fn enqueue(&mut self, pkt: &mut Packet, now: Nanos) -> EnqueueOutcome;

    fn dequeue(&mut self, now: Nanos) -> Dequeue;

    /// Packets currently held.
    fn queued_packets(&self) -> usize;

    fn drops(&self) -> &DropCounters;
}

/// Per-subscriber drop counts by cause.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropCounters {
    counts: Vec<[u64; 6]>,
}

impl DropCounters {
    pub fn new(subscribers: usize) -> Self {
        Self { counts: vec![[0; 6]; subscribers] }
    }

    pub fn record(&mut self, subscriber: u32, cause: DropCause) {
        self.counts[subscriber as usize][cause.index()] += 1;
    }

    pub fn get(&self, subscriber: u32, cause: DropCause) -> u64 {
        self.counts[subscriber as usize][cause.index()]
    }

    pub fn total(&self, subscriber: u32) -> u64 {
        self.counts[subscriber as usize].iter().sum()
    }
}
