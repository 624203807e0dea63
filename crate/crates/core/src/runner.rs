//! Independent repetitions of a scenario on a bounded worker pool.

use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use crate::engine::{run_with, EngineError};
use crate::metrics::{SeriesRecorder, ThroughputSeries};
use crate::scenario::Scenario;
use crate::types::Nanos;

/// Calls `job(run_index)` for every run in `0..runs` using at most
/// `threads` workers (all cores when `None`). Results come back sorted by
/// run index; the first error in run order wins.
pub fn run_repetitions<T, E, F>(runs: u32, threads: Option<usize>, job: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u32) -> Result<T, E> + Sync,
{
    let pool = ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .expect("failed to start worker pool");
    pool.install(|| (0..runs).into_par_iter().map(&job).collect::<Vec<_>>()).into_iter().collect()
}

/// Throughput series of every repetition of `scenario`.
pub fn series_runs(scenario: &Scenario, bin_width: Nanos, threads: Option<usize>) -> Result<Vec<ThroughputSeries>, EngineError> {
    run_repetitions(scenario.repetitions, threads, |i| {
        run_with(scenario, i, SeriesRecorder::new(bin_width)).map(SeriesRecorder::into_series)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_sorted_by_run() {
        let out: Result<Vec<u32>, ()> = run_repetitions(20, Some(3), |i| Ok(i * i));
        assert_eq!(out.unwrap(), (0..20).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn first_error_in_run_order() {
        let out: Result<Vec<u32>, u32> = run_repetitions(10, Some(4), |i| if i % 3 == 2 { Err(i) } else { Ok(i) });
        assert_eq!(out, Err(2));
    }
}
