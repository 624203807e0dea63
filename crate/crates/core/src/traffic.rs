//! Traffic sources: constant bit rate (UDP), a one-shot burst, and a greedy
//! Reno-style TCP sender.
//!
//! Sources are polled by the engine. A poll either emits one packet now,
//! names the time of the next emission, or reports that the source is
//! blocked (TCP waiting for acks) or finished.

use crate::types::{transmission_nanos, Nanos};

/// Smallest retransmission timeout, after a whole window is lost.
pub const MIN_RTO: Nanos = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emission {
    /// Emit a packet of this many bytes now.
    Now(u32),
    At(Nanos),
    Blocked,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CbrConfig {
    pub packet_bytes: u32,
    pub period: Nanos,
    pub start: Nanos,
    pub stop: Option<Nanos>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstConfig {
    pub burst_bytes: u64,
    pub packet_bytes: u32,
    pub start: Nanos,
    pub injection_rate_bps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpConfig {
    pub packet_bytes: u32,
    pub start: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSpec {
    Cbr(CbrConfig),
    Burst(BurstConfig),
    Tcp(TcpConfig),
}

impl SourceSpec {
    pub fn packet_bytes(&self) -> u32 {
        match self {
            SourceSpec::Cbr(c) => c.packet_bytes,
            SourceSpec::Burst(c) => c.packet_bytes,
            SourceSpec::Tcp(c) => c.packet_bytes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CbrSource {
    cfg: CbrConfig,
    next: Nanos,
}

impl CbrSource {
    pub fn new(cfg: CbrConfig) -> Self {
        Self { cfg, next: cfg.start }
    }

    pub fn rate_bps(&self) -> f64 {
        self.cfg.packet_bytes as f64 * 8.0 / (self.cfg.period as f64 * 1e-9)
    }

    pub fn next_emission(&mut self, now: Nanos) -> Emission {
        if self.cfg.stop.is_some_and(|s| self.next >= s) {
            return Emission::Done;
        }
        if now >= self.next {
            self.next += self.cfg.period;
            Emission::Now(self.cfg.packet_bytes)
        } else {
            Emission::At(self.next)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BurstSource {
    cfg: BurstConfig,
    sent_bytes: u64,
}

impl BurstSource {
    pub fn new(cfg: BurstConfig) -> Self {
        Self { cfg, sent_bytes: 0 }
    }

    pub fn packet_count(&self) -> u64 {
        self.cfg.burst_bytes.div_ceil(self.cfg.packet_bytes as u64)
    }

    pub fn next_emission(&mut self, now: Nanos) -> Emission {
        if self.sent_bytes >= self.cfg.burst_bytes {
            return Emission::Done;
        }
        // Back to back at the injection rate.
        let due = self.cfg.start + transmission_nanos(self.sent_bytes, self.cfg.injection_rate_bps);
        if now < due {
            return Emission::At(due);
        }
        let size = (self.cfg.burst_bytes - self.sent_bytes).min(self.cfg.packet_bytes as u64);
        self.sent_bytes += size;
        Emission::Now(size as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    SlowStart,
    CongestionAvoidance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossResponse {
    /// Window halved (or already reduced for this window).
    Recovery,
    /// Nothing left in flight: window collapsed to one segment.
    Timeout,
}

/// Greedy sender with Reno-style window control.
///
/// Every segment is either acked or reported lost, so the sender needs no
/// retransmission logic to stay greedy: lost data is simply replaced by new
/// data. The window is reduced at most once per window of data.
#[derive(Debug, Clone)]
pub struct GreedyTcpSource {
    cfg: TcpConfig,
    cwnd: f64,
    ssthresh: f64,
    in_flight: u32,
    sent: u64,
    recover: u64,
    resume_at: Nanos,
}

impl GreedyTcpSource {
    pub fn new(cfg: TcpConfig) -> Self {
        Self { cfg, cwnd: 1.0, ssthresh: f64::INFINITY, in_flight: 0, sent: 0, recover: 0, resume_at: cfg.start }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn state(&self) -> TcpState {
        if self.cwnd < self.ssthresh {
            TcpState::SlowStart
        } else {
            TcpState::CongestionAvoidance
        }
    }

    pub fn next_emission(&mut self, now: Nanos) -> Emission {
        if now < self.resume_at {
            return Emission::At(self.resume_at);
        }
        if (self.in_flight as f64) < self.cwnd.floor() {
            self.in_flight += 1;
            self.sent += 1;
            Emission::Now(self.cfg.packet_bytes)
        } else {
            Emission::Blocked
        }
    }

    /// One segment acknowledged.
    pub fn tcp_on_ack(&mut self) {
        self.in_flight = self.in_flight.saturating_sub(1);
        match self.state() {
            TcpState::SlowStart => self.cwnd += 1.0,
            TcpState::CongestionAvoidance => self.cwnd += 1.0 / self.cwnd,
        }
    }

    /// Segment `seq` (0-based emission index) was dropped.
    pub fn tcp_on_loss(&mut self, seq: u64, now: Nanos) -> LossResponse {
        self.in_flight = self.in_flight.saturating_sub(1);
        if seq >= self.recover {
            self.ssthresh = (self.cwnd / 2.0).max(2.0);
            self.cwnd = self.ssthresh;
            self.recover = self.sent;
        }
        if self.in_flight == 0 {
            self.tcp_on_timeout(now);
            LossResponse::Timeout
        } else {
            LossResponse::Recovery
        }
    }

    pub fn tcp_on_timeout(&mut self, now: Nanos) {
        self.ssthresh = self.ssthresh.min((self.cwnd / 2.0).max(2.0));
        self.cwnd = 1.0;
        self.recover = self.sent;
        self.resume_at = now + MIN_RTO;
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    Cbr(CbrSource),
    Burst(BurstSource),
    Tcp(GreedyTcpSource),
}

impl Source {
    pub fn from_spec(spec: &SourceSpec) -> Self {
        match spec {
            SourceSpec::Cbr(c) => Source::Cbr(CbrSource::new(*c)),
            SourceSpec::Burst(c) => Source::Burst(BurstSource::new(*c)),
            SourceSpec::Tcp(c) => Source::Tcp(GreedyTcpSource::new(*c)),
        }
    }

    pub fn next_emission(&mut self, now: Nanos) -> Emission {
        match self {
            Source::Cbr(s) => s.next_emission(now),
            Source::Burst(s) => s.next_emission(now),
            Source::Tcp(s) => s.next_emission(now),
        }
    }

    pub fn as_tcp_mut(&mut self) -> Option<&mut GreedyTcpSource> {
        match self {
            Source::Tcp(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_tcp(&self) -> bool {
        matches!(self, Source::Tcp(_))
    }
}
