//! Shared domain types and the simulation clock.

/// Simulated time and durations, in integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Token rates are divided by this to obtain scheduling weights, so a
/// 2.5 Mb/s contract has weight 2.5.
pub const WEIGHT_REFERENCE_BPS: f64 = 1e6;

pub fn secs_to_nanos(secs: f64) -> Nanos {
    (secs * NANOS_PER_SEC as f64).round() as Nanos
}

pub fn nanos_to_secs(t: Nanos) -> f64 {
    t as f64 / NANOS_PER_SEC as f64
}

/// Time needed to serialize `size_bytes` at `rate_bps`, in seconds.
pub fn transmission_time(size_bytes: u64, rate_bps: u64) -> f64 {
    assert!(rate_bps > 0, "transmission rate must be positive");
    (8 * size_bytes) as f64 / rate_bps as f64
}

/// Same as [`transmission_time`], rounded up to whole nanoseconds.
pub fn transmission_nanos(size_bytes: u64, rate_bps: u64) -> Nanos {
    assert!(rate_bps > 0, "transmission rate must be positive");
    let bits_ns = 8 * size_bytes as u128 * NANOS_PER_SEC as u128;
    bits_ns.div_ceil(rate_bps as u128) as Nanos
}

/// A packet travelling through an access switch.
///
/// `conformant` is assigned by the meter (or shaper) when the packet reaches
/// the traffic control stage; sources always emit it as `false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    /// Global arrival index within a run.
    pub id: u64,
    pub subscriber: u32,
    /// Index of the source that emitted the packet.
    pub source: u32,
    /// Per-source emission counter (used for TCP acks).
    pub source_seq: u64,
    pub size_bytes: u32,
    pub arrival: Nanos,
    pub conformant: bool,
    /// Per-subscriber arrival counter, dense from 0.
    pub seq: u64,
}

impl Packet {
    /// A bare packet for driving a discipline directly.
    pub fn new(subscriber: u32, size_bytes: u32, arrival: Nanos, seq: u64) -> Self {
        Self {
            id: 0,
            subscriber,
            source: 0,
            source_seq: seq,
            size_bytes,
            arrival,
            conformant: false,
            seq,
        }
    }

    pub fn bits(&self) -> u64 {
        8 * self.size_bytes as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub capacity_bps: u64,
    pub propagation_delay: Nanos,
}

/// Service contract of one subscriber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriberContract {
    pub token_rate_bps: u64,
    pub bucket_bytes: u64,
    /// Per-subscriber buffer (ignored by the shared-FIFO discipline).
    pub queue_bytes: u64,
}

impl SubscriberContract {
    pub fn weight(&self) -> f64 {
        self.token_rate_bps as f64 / WEIGHT_REFERENCE_BPS
    }
}

/// Monotonic simulated clock.
#[derive(Debug, Default, Clone)]
pub struct Clock {
    now: Nanos,
}

impl Clock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn now_secs(&self) -> f64 {
        nanos_to_secs(self.now)
    }

    /// Moves the clock forward. Panics if `t` lies in the past.
    pub fn advance_to(&mut self, t: Nanos) {
        assert!(t >= self.now, "simulated time went backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_clock_reads_zero() {
        let c = Clock::new();
        assert_eq!(c.now(), 0);
        assert_eq!(c.now_secs(), 0.0);
    }

    #[test]
    fn clock_after_one_transmission() {
        let mut c = Clock::new();
        let tx = transmission_nanos(1000, 100_000_000);
        c.advance_to(c.now() + tx);
        assert_eq!(c.now(), 80_000);
        assert_eq!(c.now(), c.now());
    }

    #[test]
    #[should_panic]
    fn clock_rejects_going_back() {
        let mut c = Clock::new();
        c.advance_to(10);
        c.advance_to(9);
    }

    #[test]
    fn transmission_times() {
        assert_eq!(transmission_time(1000, 100_000_000), 80e-6);
        assert_eq!(transmission_time(1500, 1_000_000_000), 12e-6);
        assert_eq!(transmission_time(0, 1_000_000_000), 0.0);
        assert_eq!(transmission_nanos(1000, 100_000_000), 80_000);
        assert_eq!(transmission_nanos(1500, 1_000_000_000), 12_000);
        assert_eq!(transmission_nanos(1000, 10_000_000_000), 800);
        // 8000 bits at 3 b/s does not divide evenly; round up.
        assert_eq!(transmission_nanos(1000, 3), 2_666_666_666_667);
    }

    #[test]
    fn weights_use_one_megabit_reference() {
        let c = SubscriberContract { token_rate_bps: 7_500_000, bucket_bytes: 1_000_000, queue_bytes: 1_000_000 };
        assert_eq!(c.weight(), 7.5);
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(secs_to_nanos(0.0005), 500_000);
        assert_eq!(secs_to_nanos(60.0), 60 * NANOS_PER_SEC);
        assert_eq!(nanos_to_secs(80_000), 80e-6);
    }
}
