//! Token bucket, used either as a meter (tag packets, never delay) or as the
//! shaping element of a token bucket filter (hold packets until they conform).
//!
//! Tokens are kept in fixed point: one unit is one nanobit, so a bucket
//! filling at `r` bits per second gains exactly `r` units per nanosecond and
//! accrual is exact for any integer rate. Fractions of a byte are therefore
//! carried between packets without rounding drift.

use thiserror::Error;

use crate::types::{nanos_to_secs, Nanos, NANOS_PER_SEC};

const UNITS_PER_BYTE: u128 = 8 * NANOS_PER_SEC as u128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenBucketError {
    #[error("packet of {size} bytes can never conform to a bucket of depth {depth} bytes")]
    ExceedsDepth { size: u64, depth: u64 },
}

#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate_bps: u64,
    depth_bytes: u64,
    tokens: u128,
    last_update: Nanos,
}

impl TokenBucket {
    /// A full bucket at time zero.
    pub fn new(rate_bps: u64, depth_bytes: u64) -> Self {
        Self {
            rate_bps,
            depth_bytes,
            tokens: depth_bytes as u128 * UNITS_PER_BYTE,
            last_update: 0,
        }
    }

    /// A bucket holding `tokens_bytes` (clamped to the depth) at time `t`.
    pub fn with_tokens(rate_bps: u64, depth_bytes: u64, tokens_bytes: u64, t: Nanos) -> Self {
        Self {
            rate_bps,
            depth_bytes,
            tokens: tokens_bytes.min(depth_bytes) as u128 * UNITS_PER_BYTE,
            last_update: t,
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn depth_bytes(&self) -> u64 {
        self.depth_bytes
    }

    pub fn last_update(&self) -> Nanos {
        self.last_update
    }

    /// Current token level in (fractional) bytes, as of the last update.
    pub fn tokens_bytes(&self) -> f64 {
        self.tokens as f64 / UNITS_PER_BYTE as f64
    }

    fn depth_units(&self) -> u128 {
        self.depth_bytes as u128 * UNITS_PER_BYTE
    }

    fn tokens_at(&self, t: Nanos) -> u128 {
        debug_assert!(t >= self.last_update, "token bucket queried in the past");
        let elapsed = t.saturating_sub(self.last_update) as u128;
        let accrued = elapsed.saturating_mul(self.rate_bps as u128);
        self.tokens.saturating_add(accrued).min(self.depth_units())
    }

    /// Brings the token level up to date at `t`.
    pub fn refill(&mut self, t: Nanos) {
        if t > self.last_update {
            self.tokens = self.tokens_at(t);
            self.last_update = t;
        }
    }

    /// Meters a packet of `size_bytes` arriving at `t`.
    ///
    /// Conformant packets consume tokens; a non-conformant verdict leaves the
    /// token level untouched.
    pub fn meter(&mut self, size_bytes: u64, t: Nanos) -> bool {
        self.refill(t);
        let need = size_bytes as u128 * UNITS_PER_BYTE;
        if self.tokens >= need {
            self.tokens -= need;
            true
        } else {
            false
        }
    }

    /// Earliest time at or after `now` when a packet of `size_bytes` would
    /// conform. Does not modify the bucket.
    pub fn next_conformance_time(&self, size_bytes: u64, now: Nanos) -> Result<Nanos, TokenBucketError> {
        if size_bytes > self.depth_bytes {
            return Err(TokenBucketError::ExceedsDepth { size: size_bytes, depth: self.depth_bytes });
        }
        let now = now.max(self.last_update);
        let have = self.tokens_at(now);
        let need = size_bytes as u128 * UNITS_PER_BYTE;
        if have >= need {
            return Ok(now);
        }
        if self.rate_bps == 0 {
            return Ok(Nanos::MAX);
        }
        let wait = (need - have).div_ceil(self.rate_bps as u128);
        Ok(now.saturating_add(wait.min(Nanos::MAX as u128) as Nanos))
    }

    /// Seconds-based view of [`Self::next_conformance_time`].
    pub fn next_conformance_secs(&self, size_bytes: u64, now: Nanos) -> Result<f64, TokenBucketError> {
        self.next_conformance_time(size_bytes, now).map(nanos_to_secs)
    }
}
