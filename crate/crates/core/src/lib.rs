//! Traffic control for shared access links.
//!
//! The crate implements three per-subscriber traffic control disciplines for
//! the downstream feeder link of a shared access network:
//!
//! - [`sched::DrrTbm`]: token bucket meters in front of per-subscriber FIFO
//!   queues, with conformant bytes served round-robin ahead of non-conformant
//!   bytes, which share the excess bandwidth by deficit round-robin.
//! - [`sched::RrTbf`]: token bucket filters (shapers) served round-robin.
//! - [`sched::CsfqTbm`]: token bucket meters feeding one shared FIFO, with
//!   core-stateless fair queueing drops for non-conformant packets.
//!
//! Around them sit a deterministic discrete-event simulator ([`engine`]),
//! traffic sources ([`traffic`]), a water-filling oracle for the normalized
//! fair rate ([`fair_rate`]), post-processing of event logs ([`metrics`]) and
//! a plain-text scenario format ([`scenario`]).

pub mod engine;
pub mod fair_rate;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod sched;
pub mod token_bucket;
pub mod traffic;
pub mod types;

pub use types::{Nanos, Packet};
