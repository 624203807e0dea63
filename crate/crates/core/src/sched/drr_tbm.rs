//! Deficit round-robin with token bucket meters.
//!
//! Each subscriber has one physical FIFO. Two byte counters split its
//! content into a conformant budget (`cc`) and a non-conformant budget
//! (`nc`) without reordering packets: the head packet is charged to
//! whichever budget serves it. Conformant budgets are served round-robin,
//! one packet per turn, ahead of anything else; only when no subscriber's
//! conformant budget covers its head packet does the scheduler fall through
//! to deficit round-robin over the non-conformant budgets.
//!
//! On overflow a conformant arrival is discarded but its byte count is moved
//! from `nc` to `cc`, which has the same effect on service as preempting a
//! queued non-conformant packet.

use std::collections::VecDeque;

use thiserror::Error;

use super::{Dequeue, Discipline, DropCause, DropCounters, EnqueueOutcome};
use crate::token_bucket::TokenBucket;
use crate::types::{Nanos, Packet, SubscriberContract};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantaError {
    #[error("subscriber {0} has a non-positive token rate")]
    NonPositiveWeight(usize),
    #[error("no subscribers")]
    Empty,
}

/// Quanta proportional to the contract weights, with the smallest quantum
/// equal to the maximum packet size.
pub fn set_quanta(contracts: &[SubscriberContract], max_packet_bytes: u32) -> Result<Vec<u64>, QuantaError> {
    if let Some(i) = contracts.iter().position(|c| c.token_rate_bps == 0) {
        return Err(QuantaError::NonPositiveWeight(i));
    }
    let min_rate = contracts.iter().map(|c| c.token_rate_bps).min().ok_or(QuantaError::Empty)? as u128;
    // Integer rates keep the ceiling exact.
    Ok(contracts
        .iter()
        .map(|c| (c.token_rate_bps as u128 * max_packet_bytes as u128).div_ceil(min_rate) as u64)
        .collect())
}

#[derive(Debug, Clone)]
pub struct DrrSubscriberConfig {
    pub quantum: u64,
    pub queue_bytes: u64,
    pub meter: TokenBucket,
}

#[derive(Debug, Clone)]
pub struct SubscriberState {
    queue: VecDeque<Packet>,
    queued_bytes: u64,
    capacity: u64,
    cc: u64,
    nc: u64,
    dc: u64,
    quantum: u64,
    meter: TokenBucket,
    in_conformant: bool,
    in_nonconformant: bool,
}

impl SubscriberState {
    fn new(cfg: DrrSubscriberConfig) -> Self {
        Self {
            queue: VecDeque::new(),
            queued_bytes: 0,
            capacity: cfg.queue_bytes,
            cc: 0,
            nc: 0,
            dc: 0,
            quantum: cfg.quantum,
            meter: cfg.meter,
            in_conformant: false,
            in_nonconformant: false,
        }
    }

    pub fn cc(&self) -> u64 {
        self.cc
    }

    pub fn nc(&self) -> u64 {
        self.nc
    }

    pub fn dc(&self) -> u64 {
        self.dc
    }

    pub fn quantum(&self) -> u64 {
        self.quantum
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn meter(&self) -> &TokenBucket {
        &self.meter
    }

    fn head_size(&self) -> Option<u64> {
        self.queue.front().map(|p| p.size_bytes as u64)
    }

    fn head_covered_by_cc(&self) -> bool {
        self.head_size().is_some_and(|h| self.cc >= h)
    }

    fn pop(&mut self) -> Packet {
        let p = self.queue.pop_front().expect("pop from empty subscriber queue");
        self.queued_bytes -= p.size_bytes as u64;
        p
    }
}

/// Which pass of the dequeue procedure emitted a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Conformant,
    Nonconformant,
}

#[derive(Debug, Clone)]
pub struct DrrTbm {
    subs: Vec<SubscriberState>,
    conformant_list: VecDeque<u32>,
    nonconformant_list: VecDeque<u32>,
    continued: bool,
    max_packet_bytes: u64,
    queued_packets: usize,
    drops: DropCounters,
}

impl DrrTbm {
    pub fn new(configs: Vec<DrrSubscriberConfig>, max_packet_bytes: u32) -> Self {
        let n = configs.len();
        Self {
            subs: configs.into_iter().map(SubscriberState::new).collect(),
            conformant_list: VecDeque::with_capacity(n),
            nonconformant_list: VecDeque::with_capacity(n),
            continued: false,
            max_packet_bytes: max_packet_bytes as u64,
            queued_packets: 0,
            drops: DropCounters::new(n),
        }
    }

    /// Full buckets, quanta from [`set_quanta`].
    pub fn from_contracts(contracts: &[SubscriberContract], max_packet_bytes: u32) -> Result<Self, QuantaError> {
        let quanta = set_quanta(contracts, max_packet_bytes)?;
        let configs = contracts
            .iter()
            .zip(quanta)
            .map(|(c, quantum)| DrrSubscriberConfig {
                quantum,
                queue_bytes: c.queue_bytes,
                meter: TokenBucket::new(c.token_rate_bps, c.bucket_bytes),
            })
            .collect();
        Ok(Self::new(configs, max_packet_bytes))
    }

    pub fn subscriber(&self, i: u32) -> &SubscriberState {
        &self.subs[i as usize]
    }

    pub fn subscribers(&self) -> usize {
        self.subs.len()
    }

    pub fn conformant_list(&self) -> impl Iterator<Item = u32> + '_ {
        self.conformant_list.iter().copied()
    }

    pub fn nonconformant_list(&self) -> impl Iterator<Item = u32> + '_ {
        self.nonconformant_list.iter().copied()
    }

    pub fn continued(&self) -> bool {
        self.continued
    }

    fn ensure_conformant_member(&mut self, i: u32) {
        let s = &mut self.subs[i as usize];
        if !s.in_conformant {
            s.in_conformant = true;
            self.conformant_list.push_back(i);
        }
    }

    /// Dequeue, also reporting which pass served the packet.
    pub fn dequeue_with_phase(&mut self) -> Option<(Packet, Phase)> {
        if let Some(p) = self.serve_conformant() {
            return Some((p, Phase::Conformant));
        }
        self.serve_nonconformant().map(|p| (p, Phase::Nonconformant))
    }

    fn serve_conformant(&mut self) -> Option<Packet> {
        while let Some(i) = self.conformant_list.pop_front() {
            let s = &mut self.subs[i as usize];
            s.in_conformant = false;
            let Some(size) = s.head_size() else { continue };
            if s.cc < size {
                // Stale entry; falls out of the list.
                continue;
            }
            s.cc -= size;
            let p = s.pop();
            if s.head_covered_by_cc() {
                s.in_conformant = true;
                self.conformant_list.push_back(i);
            }
            self.queued_packets -= 1;
            return Some(p);
        }
        None
    }

    fn serve_nonconformant(&mut self) -> Option<Packet> {
        while let Some(i) = self.nonconformant_list.pop_front() {
            let continued = std::mem::take(&mut self.continued);
            let s = &mut self.subs[i as usize];
            s.in_nonconformant = false;
            let size = match s.head_size() {
                Some(size) if s.nc > 0 => size,
                _ => {
                    s.dc = 0;
                    continue;
                }
            };
            if !continued {
                s.dc += s.quantum;
            }
            if s.dc < size {
                // Only reachable on a continued visit whose head changed in
                // between; the leftover deficit rolls into the next round.
                s.in_nonconformant = true;
                self.nonconformant_list.push_back(i);
                continue;
            }
            s.dc -= size;
            // Phase 1 already ran, so cc < size here. Mixed packet sizes can
            // leave nc < size as well; the remainder then comes out of cc.
            let from_nc = s.nc.min(size);
            s.nc -= from_nc;
            s.cc -= size - from_nc;
            let p = s.pop();
            self.queued_packets -= 1;

            match s.head_size() {
                Some(next) if s.nc > 0 => {
                    s.in_nonconformant = true;
                    if s.dc >= next {
                        self.continued = true;
                        self.nonconformant_list.push_front(i);
                    } else {
                        self.nonconformant_list.push_back(i);
                    }
                }
                _ => s.dc = 0,
            }
            if s.head_covered_by_cc() {
                self.ensure_conformant_member(i);
            }
            return Some(p);
        }
        None
    }

    /// Checks every structural invariant; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut in_c = vec![0u32; self.subs.len()];
        let mut in_n = vec![0u32; self.subs.len()];
        for &i in &self.conformant_list {
            in_c[i as usize] += 1;
        }
        for &i in &self.nonconformant_list {
            in_n[i as usize] += 1;
        }
        let mut packets = 0;
        for (i, s) in self.subs.iter().enumerate() {
            let bytes: u64 = s.queue.iter().map(|p| p.size_bytes as u64).sum();
            packets += s.queue.len();
            if bytes != s.queued_bytes {
                return Err(format!("subscriber {i}: queued_bytes {} != {}", s.queued_bytes, bytes));
            }
            if s.cc + s.nc != bytes {
                return Err(format!("subscriber {i}: cc {} + nc {} != queued {}", s.cc, s.nc, bytes));
            }
            if in_c[i] > 1 || in_n[i] > 1 {
                return Err(format!("subscriber {i} listed twice"));
            }
            if (in_c[i] == 1) != s.in_conformant || (in_n[i] == 1) != s.in_nonconformant {
                return Err(format!("subscriber {i}: membership flags out of sync"));
            }
            if s.head_covered_by_cc() && !s.in_conformant {
                return Err(format!("subscriber {i}: conformant head not scheduled"));
            }
            if s.nc > 0 && !s.in_nonconformant {
                return Err(format!("subscriber {i}: non-conformant bytes not scheduled"));
            }
            if s.dc > s.quantum + self.max_packet_bytes {
                return Err(format!("subscriber {i}: deficit {} exceeds quantum + max packet", s.dc));
            }
        }
        if packets != self.queued_packets {
            return Err(format!("packet count {} != {}", self.queued_packets, packets));
        }
        Ok(())
    }
}

impl Discipline for DrrTbm {
    fn enqueue(&mut self, pkt: &mut Packet, now: Nanos) -> EnqueueOutcome {
        let i = pkt.subscriber;
        let size = pkt.size_bytes as u64;
        let s = &mut self.subs[i as usize];
        pkt.conformant = s.meter.meter(size, now);

        if s.queued_bytes + size > s.capacity {
            let cause = if !pkt.conformant {
                DropCause::OverflowNonconformant
            } else if s.nc >= size {
                s.cc += size;
                s.nc -= size;
                if s.head_covered_by_cc() {
                    self.ensure_conformant_member(i);
                }
                DropCause::Swap
            } else {
                DropCause::OverflowConformantNoSwap
            };
            self.drops.record(i, cause);
            return EnqueueOutcome::Dropped(cause);
        }

        s.queue.push_back(*pkt);
        s.queued_bytes += size;
        self.queued_packets += 1;
        if pkt.conformant {
            s.cc += size;
            self.ensure_conformant_member(i);
        } else {
            s.nc += size;
            if !s.in_nonconformant {
                s.in_nonconformant = true;
                s.dc = 0;
                self.nonconformant_list.push_back(i);
            }
        }
        EnqueueOutcome::Accepted
    }

    fn dequeue(&mut self, _now: Nanos) -> Dequeue {
        match self.dequeue_with_phase() {
            Some((p, _)) => Dequeue::Packet(p),
            None => Dequeue::Empty,
        }
    }

    fn queued_packets(&self) -> usize {
        self.queued_packets
    }

    fn drops(&self) -> &DropCounters {
        &self.drops
    }
}
