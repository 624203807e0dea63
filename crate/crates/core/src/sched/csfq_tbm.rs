//! Token bucket meters in front of one shared FIFO with core-stateless fair
//! queueing drops for non-conformant packets.
//!
//! The access switch plays both CSFQ roles at once: it estimates each
//! subscriber's non-conformant arrival rate by exponential averaging (edge)
//! and drops non-conformant packets with probability
//! `max(0, 1 - alpha * w / rate)` against an estimate of the normalized fair
//! rate `alpha` (core). Conformant packets are only lost when the FIFO is
//! full. Because everything shares one FIFO, packet order across
//! subscribers is preserved, and so is any non-conformant backlog sitting
//! ahead of newly arriving conformant traffic.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dequeue, Discipline, DropCause, DropCounters, EnqueueOutcome};
use crate::token_bucket::TokenBucket;
use crate::types::{Nanos, Packet, SubscriberContract};

/// Exponentially averaged arrival rate.
///
/// With `T` the interarrival time and `l` the packet bits, each update sets
/// `rate = (1 - e^(-T/K)) * l/T + e^(-T/K) * rate`. Updates with `l = 0`
/// simply decay the estimate, which lets aggregate estimators be advanced on
/// every arrival regardless of class.
#[derive(Debug, Clone)]
pub struct FlowRateEstimator {
    rate_bps: f64,
    last_arrival: Option<Nanos>,
    k: Nanos,
}

impl FlowRateEstimator {
    /// Estimator whose first sample only starts the clock.
    pub fn new(k: Nanos) -> Self {
        Self { rate_bps: 0.0, last_arrival: None, k }
    }

    /// Estimator that has been observing (and seeing nothing) since `t`.
    pub fn starting_at(k: Nanos, t: Nanos) -> Self {
        Self { rate_bps: 0.0, last_arrival: Some(t), k }
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn last_arrival(&self) -> Option<Nanos> {
        self.last_arrival
    }

    pub fn estimate_rate(&mut self, bytes: u32, t: Nanos) -> f64 {
        let Some(last) = self.last_arrival else {
            self.last_arrival = Some(t);
            return self.rate_bps;
        };
        debug_assert!(t >= last);
        // Simultaneous arrivals are spaced one nanosecond apart.
        let gap_ns = t.saturating_sub(last).max(1);
        let gap = gap_ns as f64 * 1e-9;
        let bits = 8.0 * bytes as f64;
        if self.k == 0 {
            self.rate_bps = bits / gap;
        } else {
            let x = gap_ns as f64 / self.k as f64;
            let keep = (-x).exp();
            let fresh = -(-x).exp_m1();
            self.rate_bps = fresh * (bits / gap) + keep * self.rate_bps;
        }
        self.last_arrival = Some(t);
        self.rate_bps
    }
}

/// Drop probability of a non-conformant packet from a flow sending
/// `flow_rate_bps` with weight `weight`, given the normalized fair rate.
pub fn csfq_drop_probability(flow_rate_bps: f64, alpha: f64, weight: f64) -> f64 {
    if flow_rate_bps <= 0.0 {
        return 0.0;
    }
    (1.0 - alpha * weight / flow_rate_bps).max(0.0)
}

#[derive(Debug, Clone)]
pub struct SharedFifo {
    queue: VecDeque<Packet>,
    occupancy_bytes: u64,
    capacity_bytes: u64,
    amendment_threshold: u64,
}

impl SharedFifo {
    pub fn new(capacity_bytes: u64, amendment_threshold: u64) -> Self {
        Self { queue: VecDeque::new(), occupancy_bytes: 0, capacity_bytes, amendment_threshold }
    }

    pub fn occupancy_bytes(&self) -> u64 {
        self.occupancy_bytes
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Tail drop: returns false if the packet does not fit.
    pub fn csfq_enqueue(&mut self, pkt: Packet) -> bool {
        let size = pkt.size_bytes as u64;
        if self.occupancy_bytes + size > self.capacity_bytes {
            return false;
        }
        self.occupancy_bytes += size;
        self.queue.push_back(pkt);
        true
    }

    pub fn csfq_dequeue(&mut self) -> Option<Packet> {
        let p = self.queue.pop_front()?;
        self.occupancy_bytes -= p.size_bytes as u64;
        Some(p)
    }

    /// Scale applied to alpha: `threshold / occupancy` above the threshold,
    /// one otherwise.
    pub fn amendment_factor(&self) -> f64 {
        if self.amendment_threshold == 0 || self.occupancy_bytes <= self.amendment_threshold {
            1.0
        } else {
            self.amendment_threshold as f64 / self.occupancy_bytes as f64
        }
    }
}

/// Estimator of the normalized fair rate.
///
/// Aggregate non-conformant arrival (`A`), accepted non-conformant (`F`) and
/// conformant arrival rates are averaged with constant `K_alpha`. The excess
/// capacity is the link rate minus the conformant estimate. While `A` is at
/// least the excess capacity, alpha is rescaled by `C_ex / F` once per
/// `K_alpha`; otherwise it is set to the largest per-weight rate label seen
/// during the last `K_alpha`.
#[derive(Debug, Clone)]
pub struct AlphaEstimator {
    alpha: f64,
    k_alpha: Nanos,
    arrivals: FlowRateEstimator,
    accepted: FlowRateEstimator,
    conformant: FlowRateEstimator,
    congested: bool,
    window_start: Nanos,
    max_label: f64,
}

impl AlphaEstimator {
    pub fn new(k_alpha: Nanos) -> Self {
        Self {
            alpha: 0.0,
            k_alpha,
            arrivals: FlowRateEstimator::starting_at(k_alpha, 0),
            accepted: FlowRateEstimator::starting_at(k_alpha, 0),
            conformant: FlowRateEstimator::starting_at(k_alpha, 0),
            congested: false,
            window_start: 0,
            max_label: 0.0,
        }
    }

    /// Raw (unamended) alpha, in b/s per unit weight.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn congested(&self) -> bool {
        self.congested
    }

    pub fn arrival_rate_est(&self) -> f64 {
        self.arrivals.rate_bps()
    }

    pub fn accepted_rate_est(&self) -> f64 {
        self.accepted.rate_bps()
    }

    pub fn conformant_rate_est(&self) -> f64 {
        self.conformant.rate_bps()
    }

    /// Feeds one arrival into the aggregate estimators.
    pub fn observe(&mut self, now: Nanos, conformant_bytes: u32, nonconformant_bytes: u32, accepted_bytes: u32) {
        self.conformant.estimate_rate(conformant_bytes, now);
        self.arrivals.estimate_rate(nonconformant_bytes, now);
        self.accepted.estimate_rate(accepted_bytes, now);
    }

    pub fn excess_capacity(&self, capacity_bps: f64) -> f64 {
        (capacity_bps - self.conformant.rate_bps()).max(0.0)
    }

    /// Alpha after the buffer-based amendment.
    pub fn effective_alpha(&self, fifo: &SharedFifo) -> f64 {
        self.alpha * fifo.amendment_factor()
    }

    /// Advances the estimator after an arrival whose per-weight rate label
    /// was `label` (none for conformant packets); returns the amended alpha.
    pub fn update_alpha(&mut self, fifo: &SharedFifo, excess_bps: f64, label: Option<f64>, now: Nanos) -> f64 {
        let a = self.arrivals.rate_bps();
        let window_over = now >= self.window_start.saturating_add(self.k_alpha);
        if a > 0.0 && a >= excess_bps {
            if !self.congested {
                self.congested = true;
                self.window_start = now;
            } else if window_over {
                let f = self.accepted.rate_bps();
                self.alpha = if self.alpha <= 0.0 || f <= 0.0 {
                    self.max_label
                } else {
                    self.alpha * excess_bps / f
                };
                // Past this point every flow is accepted anyway.
                if self.max_label > 0.0 {
                    self.alpha = self.alpha.min(self.max_label / fifo.amendment_factor());
                }
                self.window_start = now;
                self.max_label = 0.0;
            }
        } else if self.congested {
            self.congested = false;
            self.window_start = now;
            self.max_label = 0.0;
        } else if window_over {
            self.alpha = self.max_label;
            self.window_start = now;
            self.max_label = 0.0;
        }
        if let Some(l) = label {
            self.max_label = self.max_label.max(l);
        }
        self.effective_alpha(fifo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsfqConfig {
    pub capacity_bps: u64,
    /// Per-flow rate averaging constant.
    pub k: Nanos,
    pub k_alpha: Nanos,
    pub fifo_bytes: u64,
    pub amendment_threshold: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CsfqTbm {
    meters: Vec<TokenBucket>,
    flows: Vec<FlowRateEstimator>,
    weights: Vec<f64>,
    alpha: AlphaEstimator,
    fifo: SharedFifo,
    capacity_bps: f64,
    rng: ChaCha8Rng,
    drops: DropCounters,
}

impl CsfqTbm {
    pub fn from_contracts(contracts: &[SubscriberContract], cfg: CsfqConfig) -> Self {
        Self {
            meters: contracts.iter().map(|c| TokenBucket::new(c.token_rate_bps, c.bucket_bytes)).collect(),
            flows: contracts.iter().map(|_| FlowRateEstimator::new(cfg.k)).collect(),
            weights: contracts.iter().map(|c| c.weight()).collect(),
            alpha: AlphaEstimator::new(cfg.k_alpha),
            fifo: SharedFifo::new(cfg.fifo_bytes, cfg.amendment_threshold),
            capacity_bps: cfg.capacity_bps as f64,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            drops: DropCounters::new(contracts.len()),
        }
    }

    pub fn alpha(&self) -> &AlphaEstimator {
        &self.alpha
    }

    pub fn fifo(&self) -> &SharedFifo {
        &self.fifo
    }

    pub fn flow_rate(&self, i: u32) -> f64 {
        self.flows[i as usize].rate_bps()
    }
}

impl Discipline for CsfqTbm {
    fn enqueue(&mut self, pkt: &mut Packet, now: Nanos) -> EnqueueOutcome {
        let i = pkt.subscriber as usize;
        let size = pkt.size_bytes;
        pkt.conformant = self.meters[i].meter(size as u64, now);

        let mut label = None;
        let outcome = if pkt.conformant {
            if self.fifo.csfq_enqueue(*pkt) {
                EnqueueOutcome::Accepted
            } else {
                EnqueueOutcome::Dropped(DropCause::TailDrop)
            }
        } else {
            let rate = self.flows[i].estimate_rate(size, now);
            let w = self.weights[i];
            label = Some(rate / w);
            let p = csfq_drop_probability(rate, self.alpha.effective_alpha(&self.fifo), w);
            let drop = p >= 1.0 || (p > 0.0 && self.rng.gen::<f64>() < p);
            if drop {
                EnqueueOutcome::Dropped(DropCause::Csfq)
            } else if self.fifo.csfq_enqueue(*pkt) {
                EnqueueOutcome::Accepted
            } else {
                EnqueueOutcome::Dropped(DropCause::TailDrop)
            }
        };

        let (c_bytes, nc_bytes) = if pkt.conformant { (size, 0) } else { (0, size) };
        let accepted = if !pkt.conformant && outcome.is_accepted() { size } else { 0 };
        self.alpha.observe(now, c_bytes, nc_bytes, accepted);
        let excess = self.alpha.excess_capacity(self.capacity_bps);
        self.alpha.update_alpha(&self.fifo, excess, label, now);

        if let EnqueueOutcome::Dropped(cause) = outcome {
            self.drops.record(pkt.subscriber, cause);
        }
        outcome
    }

    fn dequeue(&mut self, _now: Nanos) -> Dequeue {
        match self.fifo.csfq_dequeue() {
            Some(p) => Dequeue::Packet(p),
            None => Dequeue::Empty,
        }
    }

    fn queued_packets(&self) -> usize {
        self.fifo.len()
    }

    fn drops(&self) -> &DropCounters {
        &self.drops
    }
}
