//! Deterministic discrete-event simulation of one shared access link.
//!
//! Sources sit behind the backbone and feed the access switch, where the
//! configured discipline meters, queues and schedules packets onto the
//! access (feeder) link. Each subscriber is reached through its own UNI
//! serializer. Only TCP traffic needs the return path: acks and loss
//! notifications reach the sender after half a round-trip time.
//!
//! Events are ordered by `(time, priority, insertion order)`, so a run is a
//! pure function of the scenario and run index.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scenario::{DisciplineKind, Scenario, ScenarioError};
use crate::sched::{
    CsfqConfig, CsfqTbm, Dequeue, Discipline, DropCause, DrrTbm, EnqueueOutcome, QuantaError, RrTbf,
};
use crate::traffic::{Emission, Source};
use crate::types::{nanos_to_secs, transmission_nanos, Nanos, Packet};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Quanta(#[from] QuantaError),
}

/// Receives packet-level events as the simulation runs.
pub trait Observer {
    fn on_start(&mut self, _subscribers: usize, _horizon: Nanos) {}
    /// Called once per arriving packet, after the discipline has decided.
    fn on_arrival(&mut self, _pkt: &Packet, _outcome: EnqueueOutcome) {}
    fn on_transmit(&mut self, _pkt: &Packet, _start: Nanos) {}
    /// Transmission on the access link completed at `at`.
    fn on_departure(&mut self, _pkt: &Packet, _at: Nanos) {}
}

impl Observer for () {}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_start(&mut self, subscribers: usize, horizon: Nanos) {
        self.0.on_start(subscribers, horizon);
        self.1.on_start(subscribers, horizon);
    }
    fn on_arrival(&mut self, pkt: &Packet, outcome: EnqueueOutcome) {
        self.0.on_arrival(pkt, outcome);
        self.1.on_arrival(pkt, outcome);
    }
    fn on_transmit(&mut self, pkt: &Packet, start: Nanos) {
        self.0.on_transmit(pkt, start);
        self.1.on_transmit(pkt, start);
    }
    fn on_departure(&mut self, pkt: &Packet, at: Nanos) {
        self.0.on_departure(pkt, at);
        self.1.on_departure(pkt, at);
    }
}

/// Everything that happened to one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub id: u64,
    pub subscriber: u32,
    pub source: u32,
    pub seq: u64,
    pub size_bytes: u32,
    pub arrival: Nanos,
    pub conformant: bool,
    pub tx_start: Option<Nanos>,
    pub departure: Option<Nanos>,
    pub drop: Option<DropCause>,
}

/// Per-subscriber packet accounting at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Conservation {
    pub arrivals: u64,
    pub departures: u64,
    pub drops: u64,
    /// Still queued or being transmitted when the horizon was reached.
    pub residual: u64,
}

/// Complete per-packet log, indexed by packet id.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<PacketRecord>,
    subscribers: usize,
    horizon: Nanos,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    pub fn subscribers(&self) -> usize {
        self.subscribers
    }

    pub fn horizon(&self) -> Nanos {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn conservation(&self) -> Vec<Conservation> {
        let mut out = vec![Conservation::default(); self.subscribers];
        for r in &self.records {
            let c = &mut out[r.subscriber as usize];
            c.arrivals += 1;
            if r.drop.is_some() {
                c.drops += 1;
            } else if r.departure.is_some() {
                c.departures += 1;
            } else {
                c.residual += 1;
            }
        }
        out
    }

    /// Raw per-packet dump. Times are seconds; absent values are empty.
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "id", "subscriber", "source", "seq", "size_bytes", "arrival_s", "conformant", "tx_start_s", "departure_s",
            "drop",
        ])?;
        let opt = |t: Option<Nanos>| t.map(|t| nanos_to_secs(t).to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.id.to_string(),
                r.subscriber.to_string(),
                r.source.to_string(),
                r.seq.to_string(),
                r.size_bytes.to_string(),
                nanos_to_secs(r.arrival).to_string(),
                (r.conformant as u8).to_string(),
                opt(r.tx_start),
                opt(r.departure),
                r.drop.map(|d| d.as_str().to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl Observer for EventLog {
    fn on_start(&mut self, subscribers: usize, horizon: Nanos) {
        self.subscribers = subscribers;
        self.horizon = horizon;
    }

    fn on_arrival(&mut self, pkt: &Packet, outcome: EnqueueOutcome) {
        debug_assert_eq!(pkt.id as usize, self.records.len());
        self.records.push(PacketRecord {
            id: pkt.id,
            subscriber: pkt.subscriber,
            source: pkt.source,
            seq: pkt.seq,
            size_bytes: pkt.size_bytes,
            arrival: pkt.arrival,
            conformant: pkt.conformant,
            tx_start: None,
            departure: None,
            drop: match outcome {
                EnqueueOutcome::Accepted => None,
                EnqueueOutcome::Dropped(c) => Some(c),
            },
        });
    }

    fn on_transmit(&mut self, pkt: &Packet, start: Nanos) {
        let r = &mut self.records[pkt.id as usize];
        r.tx_start = Some(start);
        // Shapers only decide conformance on release.
        r.conformant = pkt.conformant;
    }

    fn on_departure(&mut self, pkt: &Packet, at: Nanos) {
        self.records[pkt.id as usize].departure = Some(at);
    }
}

/// Seed for repetition `run_index` of a scenario seeded with `seed`.
pub fn run_seed(seed: u64, run_index: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index as u64);
    rng.next_u64()
}

pub fn build_discipline(scenario: &Scenario, run_index: u32) -> Result<Box<dyn Discipline>, EngineError> {
    let subs = &scenario.subscribers;
    Ok(match scenario.discipline.kind {
        DisciplineKind::DrrTbm => Box::new(DrrTbm::from_contracts(subs, scenario.topology.max_packet_bytes)?),
        DisciplineKind::RrTbf => Box::new(RrTbf::from_contracts(subs)),
        DisciplineKind::CsfqTbm => {
            let c = scenario.discipline.csfq;
            Box::new(CsfqTbm::from_contracts(
                subs,
                CsfqConfig {
                    capacity_bps: scenario.topology.access.capacity_bps,
                    k: c.k,
                    k_alpha: c.k_alpha,
                    fifo_bytes: c.fifo_bytes,
                    amendment_threshold: c.amendment_threshold,
                    seed: run_seed(scenario.seed, run_index),
                },
            ))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    LinkDone,
    /// A TCP segment reaching the access switch.
    Arrival(Packet),
    Ack { source: u32 },
    Loss { source: u32, source_seq: u64 },
    ShaperWake,
    SourceWake(u32),
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::LinkDone => 0,
            EventKind::Arrival(_) => 1,
            EventKind::Ack { .. } | EventKind::Loss { .. } => 2,
            EventKind::ShaperWake => 3,
            EventKind::SourceWake(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: Nanos,
    priority: u8,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.priority, self.seq).cmp(&(other.time, other.priority, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Engine<O: Observer> {
    now: Nanos,
    horizon: Nanos,
    events: BinaryHeap<Reverse<Event>>,
    inserted: u64,
    discipline: Box<dyn Discipline>,
    sources: Vec<Source>,
    source_subscriber: Vec<u32>,
    emitted: Vec<u64>,
    source_wake: Vec<Option<Nanos>>,
    arrivals: u64,
    subscriber_seq: Vec<u64>,
    access_rate_bps: u64,
    access_delay: Nanos,
    in_transmission: Option<Packet>,
    shaper_wake: Option<Nanos>,
    uni_rate_bps: u64,
    uni_free: Vec<Nanos>,
    half_rtt: Nanos,
    observer: O,
}

impl<O: Observer> Engine<O> {
    pub fn new(scenario: &Scenario, run_index: u32, mut observer: O) -> Result<Self, EngineError> {
        scenario.validate()?;
        let discipline = build_discipline(scenario, run_index)?;
        let n = scenario.subscribers.len();
        let t = &scenario.topology;
        observer.on_start(n, scenario.horizon);
        let mut engine = Self {
            now: 0,
            horizon: scenario.horizon,
            events: BinaryHeap::new(),
            inserted: 0,
            discipline,
            sources: scenario.sources.iter().map(|b| Source::from_spec(&b.spec)).collect(),
            source_subscriber: scenario.sources.iter().map(|b| b.subscriber).collect(),
            emitted: vec![0; scenario.sources.len()],
            source_wake: vec![None; scenario.sources.len()],
            arrivals: 0,
            subscriber_seq: vec![0; n],
            access_rate_bps: t.access.capacity_bps,
            access_delay: t.access.propagation_delay,
            in_transmission: None,
            shaper_wake: None,
            uni_rate_bps: t.uni_rate_bps,
            uni_free: vec![0; n],
            half_rtt: t.rtt / 2,
            observer,
        };
        for s in 0..engine.sources.len() {
            engine.schedule_source(s as u32, 0);
        }
        Ok(engine)
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn discipline(&self) -> &dyn Discipline {
        self.discipline.as_ref()
    }

    pub fn observer(&self) -> &O {
        &self.observer
    }

    /// Processes the next event. Returns false once no event remains before
    /// the horizon.
    pub fn step(&mut self) -> bool {
        match self.events.peek() {
            Some(Reverse(e)) if e.time < self.horizon => {}
            _ => return false,
        }
        let Reverse(e) = self.events.pop().expect("peeked");
        debug_assert!(e.time >= self.now, "event scheduled in the past");
        self.now = e.time;
        match e.kind {
            EventKind::LinkDone => self.finish_transmission(),
            EventKind::Arrival(pkt) => self.arrive(pkt),
            EventKind::Ack { source } => {
                if let Some(tcp) = self.sources[source as usize].as_tcp_mut() {
                    tcp.tcp_on_ack();
                }
                self.poll_source(source);
            }
            EventKind::Loss { source, source_seq } => {
                let now = self.now;
                if let Some(tcp) = self.sources[source as usize].as_tcp_mut() {
                    tcp.tcp_on_loss(source_seq, now);
                }
                self.poll_source(source);
            }
            EventKind::ShaperWake => {
                if self.shaper_wake == Some(self.now) {
                    self.shaper_wake = None;
                }
                self.try_transmit();
            }
            EventKind::SourceWake(s) => {
                if self.source_wake[s as usize] == Some(self.now) {
                    self.source_wake[s as usize] = None;
                }
                self.poll_source(s);
            }
        }
        true
    }

    /// Runs to the horizon and hands back the observer.
    pub fn run(mut self) -> O {
        while self.step() {}
        self.now = self.horizon;
        self.observer
    }

    fn push(&mut self, time: Nanos, kind: EventKind) {
        let e = Event { time, priority: kind.priority(), seq: self.inserted, kind };
        self.inserted += 1;
        self.events.push(Reverse(e));
    }

    fn schedule_source(&mut self, s: u32, t: Nanos) {
        let slot = &mut self.source_wake[s as usize];
        if slot.is_some_and(|w| w <= t) {
            return;
        }
        *slot = Some(t);
        self.push(t, EventKind::SourceWake(s));
    }

    fn poll_source(&mut self, s: u32) {
        loop {
            match self.sources[s as usize].next_emission(self.now) {
                Emission::Now(size) => self.emit(s, size),
                Emission::At(t) => {
                    self.schedule_source(s, t);
                    return;
                }
                Emission::Blocked | Emission::Done => return,
            }
        }
    }

    fn emit(&mut self, s: u32, size: u32) {
        let si = s as usize;
        let mut pkt = Packet::new(self.source_subscriber[si], size, self.now, 0);
        pkt.source = s;
        pkt.source_seq = self.emitted[si];
        self.emitted[si] += 1;
        if self.sources[si].is_tcp() {
            // The sender is half a round trip away from the switch.
            let t = self.now + self.half_rtt;
            self.push(t, EventKind::Arrival(pkt));
        } else {
            self.arrive(pkt);
        }
    }

    fn arrive(&mut self, mut pkt: Packet) {
        let sub = pkt.subscriber as usize;
        pkt.id = self.arrivals;
        pkt.arrival = self.now;
        pkt.seq = self.subscriber_seq[sub];
        self.arrivals += 1;
        self.subscriber_seq[sub] += 1;
        let outcome = self.discipline.enqueue(&mut pkt, self.now);
        self.observer.on_arrival(&pkt, outcome);
        match outcome {
            EnqueueOutcome::Accepted => self.try_transmit(),
            EnqueueOutcome::Dropped(_) => {
                if self.sources[pkt.source as usize].is_tcp() {
                    let t = self.now + self.half_rtt;
                    self.push(t, EventKind::Loss { source: pkt.source, source_seq: pkt.source_seq });
                }
            }
        }
    }

    fn try_transmit(&mut self) {
        if self.in_transmission.is_some() {
            return;
        }
        match self.discipline.dequeue(self.now) {
            Dequeue::Packet(pkt) => {
                self.observer.on_transmit(&pkt, self.now);
                let done = self.now + transmission_nanos(pkt.size_bytes as u64, self.access_rate_bps);
                self.in_transmission = Some(pkt);
                self.push(done, EventKind::LinkDone);
            }
            Dequeue::WaitUntil(t) => {
                if self.shaper_wake.is_none_or(|w| t < w || w < self.now) {
                    self.shaper_wake = Some(t);
                    self.push(t, EventKind::ShaperWake);
                }
            }
            Dequeue::Empty => {}
        }
    }

    fn finish_transmission(&mut self) {
        let pkt = self.in_transmission.take().expect("link-done without a packet");
        self.observer.on_departure(&pkt, self.now);
        if self.sources[pkt.source as usize].is_tcp() {
            let sub = pkt.subscriber as usize;
            let start = (self.now + self.access_delay).max(self.uni_free[sub]);
            let delivered = start + transmission_nanos(pkt.size_bytes as u64, self.uni_rate_bps);
            self.uni_free[sub] = delivered;
            self.push(delivered + self.half_rtt, EventKind::Ack { source: pkt.source });
        }
        self.try_transmit();
    }
}

/// Runs one repetition and returns the full per-packet log.
pub fn run(scenario: &Scenario, run_index: u32) -> Result<EventLog, EngineError> {
    run_with(scenario, run_index, EventLog::new())
}

pub fn run_with<O: Observer>(scenario: &Scenario, run_index: u32, observer: O) -> Result<O, EngineError> {
    Ok(Engine::new(scenario, run_index, observer)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn scenario(kind: &str, subscribers: &str, sources: &str, horizon: f64) -> Scenario {
        let text = format!(
            "[topology]\naccess_rate = 100e6\n[discipline]\nkind = {kind}\n[run]\nhorizon = {horizon}\n\
             [subscribers]\n{subscribers}\n[sources]\n{sources}\n"
        );
        parse_scenario(&text).unwrap()
    }

    #[test]
    fn no_sources_gives_empty_log() {
        let s = scenario("drr_tbm", "0 rate=1e6 bucket=1e4", "", 1.0);
        let log = run(&s, 0).unwrap();
        assert!(log.is_empty());
        assert_eq!(log.conservation(), vec![Conservation::default()]);
    }

    #[test]
    fn conformant_cbr_only_sees_transmission_delay() {
        // 8 Mb/s against a 10 Mb/s contract.
        let s = scenario("drr_tbm", "0 rate=10e6 bucket=1e4", "0 cbr packet=1000 period=0.001", 2.0);
        let log = run(&s, 0).unwrap();
        assert_eq!(log.records().len(), 2000);
        for r in log.records() {
            assert!(r.conformant && r.drop.is_none());
            assert_eq!(r.tx_start, Some(r.arrival));
            if let Some(d) = r.departure {
                assert_eq!(d - r.arrival, 80_000);
            }
        }
        let c = log.conservation()[0];
        assert_eq!(c.drops, 0);
        assert_eq!(c.arrivals, c.departures + c.residual);
    }

    #[test]
    fn invalid_scenario_rejected_before_running() {
        let mut s = scenario("drr_tbm", "0 rate=1e6 bucket=1e4", "", 1.0);
        s.subscribers[0].token_rate_bps = 0;
        assert!(matches!(run(&s, 0), Err(EngineError::Scenario(_))));
    }

    #[test]
    fn busy_periods_never_overlap() {
        for kind in ["drr_tbm", "rr_tbf", "csfq_tbm"] {
            let s = scenario(
                kind,
                "0-1 rate=20e6 bucket=1e5 queue=1e5",
                "0-1 cbr packet=1500 period=0.0001",
                1.0,
            );
            let log = run(&s, 0).unwrap();
            let mut spans: Vec<(Nanos, Nanos)> =
                log.records().iter().filter_map(|r| Some((r.tx_start?, r.departure?))).collect();
            spans.sort();
            for w in spans.windows(2) {
                assert!(w[0].1 <= w[1].0, "{kind}: {w:?}");
            }
            for r in log.records() {
                if let Some(t) = r.tx_start {
                    assert!(t >= r.arrival);
                }
            }
        }
    }

    #[test]
    fn tcp_fills_an_idle_link() {
        let s = scenario("drr_tbm", "0 rate=10e6 bucket=1e5 queue=1e6", "0 tcp packet=1500", 20.0);
        let log = run(&s, 0).unwrap();
        let bytes: u64 = log
            .records()
            .iter()
            .filter(|r| r.departure.is_some_and(|d| d >= 10_000_000_000))
            .map(|r| r.size_bytes as u64)
            .sum();
        let rate = bytes as f64 * 8.0 / 10.0;
        assert!(rate > 90e6, "{rate}");
    }

    #[test]
    fn event_order_ties() {
        let mk = |time, kind: EventKind, seq| Event { time, priority: kind.priority(), seq, kind };
        let mut v = [
            mk(5, EventKind::SourceWake(0), 0),
            mk(5, EventKind::LinkDone, 1),
            mk(4, EventKind::ShaperWake, 2),
            mk(5, EventKind::SourceWake(1), 3),
        ];
        v.sort();
        let order: Vec<u64> = v.iter().map(|e| e.seq).collect();
        assert_eq!(order, vec![2, 1, 0, 3]);
    }

    #[test]
    fn seeds_differ_per_run() {
        assert_ne!(run_seed(1, 0), run_seed(1, 1));
        assert_eq!(run_seed(1, 3), run_seed(1, 3));
    }
}
