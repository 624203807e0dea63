//! Normalized fair rate of weighted max-min allocation of excess bandwidth.
//!
//! Given excess capacity `C_ex`, non-conformant demands `r_i` and weights
//! `w_i`, the normalized fair rate `alpha` solves
//! `C_ex = sum_i w_i * min(alpha, r_i / w_i)` when the demands exceed the
//! capacity, and is `max_i r_i / w_i` otherwise. Flow `i` then receives
//! `w_i * min(alpha, r_i / w_i)`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FairRateError {
    #[error("no flows")]
    Empty,
    #[error("{demands} demands but {weights} weights")]
    LengthMismatch { demands: usize, weights: usize },
    #[error("weight of flow {0} is not positive")]
    NonPositiveWeight(usize),
    #[error("demand of flow {0} is negative or not finite")]
    BadDemand(usize),
    #[error("excess capacity must be finite and non-negative")]
    BadCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairRateProblem {
    pub excess_capacity_bps: f64,
    pub demands_bps: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairRateSolution {
    /// Bits per second per unit weight.
    pub alpha: f64,
    pub allocations_bps: Vec<f64>,
    /// Whether total demand exceeded the excess capacity.
    pub saturated: bool,
}

impl FairRateProblem {
    fn validate(&self) -> Result<(), FairRateError> {
        if self.demands_bps.is_empty() {
            return Err(FairRateError::Empty);
        }
        if self.demands_bps.len() != self.weights.len() {
            return Err(FairRateError::LengthMismatch {
                demands: self.demands_bps.len(),
                weights: self.weights.len(),
            });
        }
        if !(self.excess_capacity_bps.is_finite() && self.excess_capacity_bps >= 0.0) {
            return Err(FairRateError::BadCapacity);
        }
        if let Some(i) = self.weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(FairRateError::NonPositiveWeight(i));
        }
        if let Some(i) = self.demands_bps.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(FairRateError::BadDemand(i));
        }
        Ok(())
    }
}

pub fn solve_alpha(p: &FairRateProblem) -> Result<FairRateSolution, FairRateError> {
    p.validate()?;
    let n = p.demands_bps.len();
    let total: f64 = p.demands_bps.iter().sum();

    if total <= p.excess_capacity_bps {
        let alpha = (0..n).map(|i| p.demands_bps[i] / p.weights[i]).fold(0.0, f64::max);
        return Ok(FairRateSolution { alpha, allocations_bps: p.demands_bps.clone(), saturated: false });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = p.demands_bps[a] / p.weights[a];
        let rb = p.demands_bps[b] / p.weights[b];
        ra.total_cmp(&rb)
    });

    // Peel off flows whose per-weight demand is below the current water
    // level; the rest share what is left in proportion to weight.
    let mut remaining = p.excess_capacity_bps;
    let mut weight_left: f64 = p.weights.iter().sum();
    let mut alpha = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let level = remaining / weight_left;
        let per_weight = p.demands_bps[i] / p.weights[i];
        if per_weight <= level {
            remaining -= p.demands_bps[i];
            weight_left -= p.weights[i];
            if k + 1 == n {
                // Unreachable when saturated, kept for rounding.
                alpha = per_weight;
            }
        } else {
            alpha = level;
            break;
        }
    }

    let allocations_bps = (0..n).map(|i| p.weights[i] * alpha.min(p.demands_bps[i] / p.weights[i])).collect();
    Ok(FairRateSolution { alpha, allocations_bps, saturated: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    fn exp1_problem() -> FairRateProblem {
        let mut weights = vec![];
        let mut demands = vec![];
        for (w, d) in [(2.5, 13.5e6), (5.0, 11e6), (7.5, 8.5e6)] {
            for _ in 0..4 {
                weights.push(w);
                demands.push(d);
            }
        }
        FairRateProblem { excess_capacity_bps: 40e6, demands_bps: demands, weights }
    }

    #[test]
    fn experiment_one_excess_split() {
        let s = solve_alpha(&exp1_problem()).unwrap();
        assert!(s.saturated);
        assert!(close(s.alpha, 2e6 / 3.0, 1e-12));
        for (k, (base, share)) in [(2.5e6, 5e6 / 3.0), (5e6, 10e6 / 3.0), (7.5e6, 5e6)].iter().enumerate() {
            let alloc = s.allocations_bps[4 * k];
            assert!(close(alloc, *share, 1e-12), "{alloc}");
            assert!(close(base + alloc, [4.1666667e6, 8.3333333e6, 12.5e6][k], 1e-7));
        }
    }

    #[test]
    fn uncongested_returns_demands() {
        let p = FairRateProblem { excess_capacity_bps: 100e6, demands_bps: vec![1e6, 6e6, 3e6], weights: vec![1.0, 2.0, 3.0] };
        let s = solve_alpha(&p).unwrap();
        assert!(!s.saturated);
        assert_eq!(s.allocations_bps, p.demands_bps);
        assert_eq!(s.alpha, 3e6);
    }

    #[test]
    fn single_flow_capped_at_capacity() {
        let p = FairRateProblem { excess_capacity_bps: 40e6, demands_bps: vec![90e6], weights: vec![2.5] };
        let s = solve_alpha(&p).unwrap();
        assert_eq!(s.allocations_bps, vec![40e6]);
        assert_eq!(s.alpha, 40e6 / 2.5);
    }

    #[test]
    fn no_excess_capacity() {
        let p = FairRateProblem {
            excess_capacity_bps: 0.0,
            demands_bps: vec![13.5e6, 11e6, 8.5e6, 5e6],
            weights: vec![2.5, 5.0, 7.5, 10.0],
        };
        let s = solve_alpha(&p).unwrap();
        assert_eq!(s.alpha, 0.0);
        assert!(s.allocations_bps.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn zero_demands() {
        let p = FairRateProblem { excess_capacity_bps: 0.0, demands_bps: vec![0.0; 3], weights: vec![1.0; 3] };
        let s = solve_alpha(&p).unwrap();
        assert!(!s.saturated);
        assert!(s.allocations_bps.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn input_errors() {
        let base = FairRateProblem { excess_capacity_bps: 1.0, demands_bps: vec![1.0, 1.0], weights: vec![1.0, 1.0] };
        let mut p = base.clone();
        p.weights[1] = 0.0;
        assert_eq!(solve_alpha(&p), Err(FairRateError::NonPositiveWeight(1)));
        let mut p = base.clone();
        p.demands_bps[0] = -1.0;
        assert_eq!(solve_alpha(&p), Err(FairRateError::BadDemand(0)));
        let mut p = base.clone();
        p.weights.pop();
        assert!(matches!(solve_alpha(&p), Err(FairRateError::LengthMismatch { .. })));
        let p = FairRateProblem { excess_capacity_bps: 1.0, demands_bps: vec![], weights: vec![] };
        assert_eq!(solve_alpha(&p), Err(FairRateError::Empty));
        let mut p = base;
        p.excess_capacity_bps = f64::NAN;
        assert_eq!(solve_alpha(&p), Err(FairRateError::BadCapacity));
    }

    fn problem() -> impl Strategy<Value = FairRateProblem> {
        (1usize..24).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..50e6, n),
                prop::collection::vec(0.1f64..20.0, n),
                0.0f64..300e6,
            )
                .prop_map(|(demands_bps, weights, excess_capacity_bps)| FairRateProblem {
                    excess_capacity_bps,
                    demands_bps,
                    weights,
                })
        })
    }

    proptest! {
        #[test]
        fn allocations_respect_capacity_and_demand(p in problem()) {
            let s = solve_alpha(&p).unwrap();
            let total: f64 = s.allocations_bps.iter().sum();
            let demand: f64 = p.demands_bps.iter().sum();
            prop_assert!(close(total, demand.min(p.excess_capacity_bps), 1e-9) || total < 1e-6);
            for (a, d) in s.allocations_bps.iter().zip(&p.demands_bps) {
                prop_assert!(*a <= d * (1.0 + 1e-12));
            }
        }

        #[test]
        fn weight_scaling(p in problem(), c in 0.01f64..100.0) {
            let s = solve_alpha(&p).unwrap();
            let mut q = p.clone();
            q.weights.iter_mut().for_each(|w| *w *= c);
            let t = solve_alpha(&q).unwrap();
            prop_assert!(close(t.alpha, s.alpha / c, 1e-9) || s.alpha < 1e-9);
            for (a, b) in s.allocations_bps.iter().zip(&t.allocations_bps) {
                prop_assert!(close(*a, *b, 1e-9) || a.abs() < 1e-6);
            }
        }
    }
}
