//! Token bucket filters served by a round-robin scheduler.
//!
//! Each subscriber's queue is released head-of-line by its shaper; the
//! scheduler visits queues cyclically and skips those whose head has not
//! yet conformed. There is no way for a subscriber to use capacity beyond
//! its token envelope.

use std::collections::VecDeque;

use super::{Dequeue, Discipline, DropCause, DropCounters, EnqueueOutcome};
use crate::token_bucket::TokenBucket;
use crate::types::{Nanos, Packet, SubscriberContract};

#[derive(Debug, Clone)]
pub struct ShapedQueue {
    queue: VecDeque<Packet>,
    queued_bytes: u64,
    capacity: u64,
    shaper: TokenBucket,
    head_release: Option<Nanos>,
}

impl ShapedQueue {
    pub fn new(capacity: u64, shaper: TokenBucket) -> Self {
        Self { queue: VecDeque::new(), queued_bytes: 0, capacity, shaper, head_release: None }
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Tail-drop admission.
    pub fn enqueue_tbf(&mut self, pkt: Packet) -> EnqueueOutcome {
        let size = pkt.size_bytes as u64;
        if size > self.shaper.depth_bytes() {
            return EnqueueOutcome::Dropped(DropCause::Oversize);
        }
        if self.queued_bytes + size > self.capacity {
            return EnqueueOutcome::Dropped(DropCause::TailDrop);
        }
        self.queue.push_back(pkt);
        self.queued_bytes += size;
        EnqueueOutcome::Accepted
    }

    /// Time at which the head packet conforms. Cached until the head leaves:
    /// nothing else draws on this shaper's tokens.
    pub fn head_release_time(&mut self, now: Nanos) -> Option<Nanos> {
        if self.head_release.is_none() {
            let head = self.queue.front()?;
            let t = self
                .shaper
                .next_conformance_time(head.size_bytes as u64, now)
                .expect("oversize packets are rejected at admission");
            self.head_release = Some(t);
        }
        self.head_release
    }

    fn release(&mut self, now: Nanos) -> Packet {
        let mut p = self.queue.pop_front().expect("release from empty queue");
        let ok = self.shaper.meter(p.size_bytes as u64, now);
        debug_assert!(ok, "released a packet before it conformed");
        p.conformant = ok;
        self.queued_bytes -= p.size_bytes as u64;
        self.head_release = None;
        p
    }
}

#[derive(Debug, Clone)]
pub struct RrTbf {
    queues: Vec<ShapedQueue>,
    next: usize,
    queued_packets: usize,
    drops: DropCounters,
}

impl RrTbf {
    pub fn new(queues: Vec<ShapedQueue>) -> Self {
        let n = queues.len();
        Self { queues, next: 0, queued_packets: 0, drops: DropCounters::new(n) }
    }

    pub fn from_contracts(contracts: &[SubscriberContract]) -> Self {
        Self::new(
            contracts
                .iter()
                .map(|c| ShapedQueue::new(c.queue_bytes, TokenBucket::new(c.token_rate_bps, c.bucket_bytes)))
                .collect(),
        )
    }

    pub fn queue(&self, i: u32) -> &ShapedQueue {
        &self.queues[i as usize]
    }

    /// Serves the next released head in cyclic order, or reports when the
    /// earliest head will be released.
    pub fn dequeue_rr(&mut self, now: Nanos) -> Dequeue {
        let n = self.queues.len();
        let mut earliest: Option<Nanos> = None;
        for k in 0..n {
            let i = (self.next + k) % n;
            let Some(release) = self.queues[i].head_release_time(now) else { continue };
            if release <= now {
                let p = self.queues[i].release(now);
                self.next = (i + 1) % n;
                self.queued_packets -= 1;
                return Dequeue::Packet(p);
            }
            earliest = Some(earliest.map_or(release, |e| e.min(release)));
        }
        match earliest {
            Some(t) => Dequeue::WaitUntil(t),
            None => Dequeue::Empty,
        }
    }
}

impl Discipline for RrTbf {
    fn enqueue(&mut self, pkt: &mut Packet, _now: Nanos) -> EnqueueOutcome {
        // Shaped traffic is conformant by construction once it leaves.
        pkt.conformant = false;
        let i = pkt.subscriber;
        let out = self.queues[i as usize].enqueue_tbf(*pkt);
        match out {
            EnqueueOutcome::Accepted => self.queued_packets += 1,
            EnqueueOutcome::Dropped(cause) => self.drops.record(i, cause),
        }
        out
    }

    fn dequeue(&mut self, now: Nanos) -> Dequeue {
        self.dequeue_rr(now)
    }

    fn queued_packets(&self) -> usize {
        self.queued_packets
    }

    fn drops(&self) -> &DropCounters {
        &self.drops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NANOS_PER_SEC;

    fn pkt(subscriber: u32, size: u32, seq: u64) -> Packet {
        Packet::new(subscriber, size, 0, seq)
    }

    #[test]
    fn admission() {
        let mut q = ShapedQueue::new(2000, TokenBucket::new(1_000_000, 1500));
        assert_eq!(q.enqueue_tbf(pkt(0, 1000, 0)), EnqueueOutcome::Accepted);
        assert_eq!(q.enqueue_tbf(pkt(0, 1000, 1)), EnqueueOutcome::Accepted);
        assert_eq!(q.enqueue_tbf(pkt(0, 1000, 2)), EnqueueOutcome::Dropped(DropCause::TailDrop));
        assert_eq!(q.enqueue_tbf(pkt(0, 1600, 3)), EnqueueOutcome::Dropped(DropCause::Oversize));
    }

    #[test]
    fn released_head_is_served() {
        let mut d = RrTbf::new(vec![ShapedQueue::new(10_000, TokenBucket::new(1_000_000, 1500))]);
        d.enqueue(&mut pkt(0, 1000, 0), 0);
        match d.dequeue(0) {
            Dequeue::Packet(p) => assert!(p.conformant),
            other => panic!("{other:?}"),
        }
        assert_eq!(d.dequeue(0), Dequeue::Empty);
    }

    #[test]
    fn unreleased_heads_report_earliest_release() {
        let q0 = ShapedQueue::new(10_000, TokenBucket::with_tokens(8_000_000, 1500, 0, 0));
        let q1 = ShapedQueue::new(10_000, TokenBucket::with_tokens(1_000_000, 1500, 0, 0));
        let mut d = RrTbf::new(vec![q0, q1]);
        d.enqueue(&mut pkt(0, 1000, 0), 0);
        d.enqueue(&mut pkt(1, 1000, 0), 0);
        // 8000 bits at 8 Mb/s is 1 ms.
        assert_eq!(d.dequeue(0), Dequeue::WaitUntil(1_000_000));
        match d.dequeue(1_000_000) {
            Dequeue::Packet(p) => assert_eq!(p.subscriber, 0),
            other => panic!("{other:?}"),
        }
        assert_eq!(d.dequeue(1_000_000), Dequeue::WaitUntil(8_000_000));
    }

    #[test]
    fn round_robin_alternates() {
        let mut d = RrTbf::new(
            (0..3).map(|_| ShapedQueue::new(100_000, TokenBucket::new(1_000_000, 50_000))).collect(),
        );
        for k in 0..3 {
            for i in 0..3 {
                d.enqueue(&mut pkt(i, 1000, k), 0);
            }
        }
        let order: Vec<u32> = (0..9)
            .map(|_| match d.dequeue(0) {
                Dequeue::Packet(p) => p.subscriber,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(order, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn oversubscribed_cbr_drops_fluid_share() {
        // 16 Mb/s into a 2.5 Mb/s shaper with a 1 MB queue, link always free.
        let mut d = RrTbf::new(vec![ShapedQueue::new(1_000_000, TokenBucket::new(2_500_000, 1_000_000))]);
        let horizon = 400 * NANOS_PER_SEC;
        let (mut arrivals, mut drops) = (0u64, 0u64);
        let mut t = 0;
        let mut seq = 0;
        while t < horizon {
            while let Dequeue::Packet(_) = d.dequeue(t) {}
            arrivals += 1;
            if !d.enqueue(&mut pkt(0, 1000, seq), t).is_accepted() {
                drops += 1;
            }
            seq += 1;
            t += 500_000;
        }
        let rate = drops as f64 / arrivals as f64;
        // Bucket and queue together absorb 2 MB, i.e. 2000 packets.
        let expected = (arrivals as f64 * 13.5 / 16.0 - 2000.0) / arrivals as f64;
        assert!((rate - expected).abs() < 1e-3, "{rate} vs {expected}");
        assert!((rate - 13.5 / 16.0).abs() < 0.01);
    }
}
