//! Throughput series, windowed averages and confidence intervals.
//!
//! Bytes are attributed to the bin containing the departure instant (end of
//! transmission on the access link); bins are half-open.

use std::io;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::{EventLog, Observer};
use crate::types::{nanos_to_secs, secs_to_nanos, Nanos, Packet};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("window [{t0}, {t1}) s is empty or outside the simulated horizon of {horizon} s")]
    BadWindow { t0: f64, t1: f64, horizon: f64 },
    #[error("window [{t0}, {t1}) s contains no whole bin")]
    NoBins { t0: f64, t1: f64 },
    #[error("no runs to summarize")]
    NoRuns,
    #[error("runs disagree on flows, bin width or horizon")]
    Mismatch,
    #[error("bin width must be positive")]
    BadBinWidth,
    #[error("series file: {0}")]
    Csv(#[from] csv::Error),
    #[error("series file line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Delivered bytes per flow and bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThroughputSeries {
    bin_width: Nanos,
    horizon: Nanos,
    bytes: Vec<Vec<u64>>,
}

impl ThroughputSeries {
    pub fn new(flows: usize, bin_width: Nanos, horizon: Nanos) -> Self {
        assert!(bin_width > 0, "bin width must be positive");
        let bins = horizon.div_ceil(bin_width) as usize;
        Self { bin_width, horizon, bytes: vec![vec![0; bins]; flows] }
    }

    pub fn bin_width(&self) -> Nanos {
        self.bin_width
    }

    pub fn horizon(&self) -> Nanos {
        self.horizon
    }

    pub fn flows(&self) -> usize {
        self.bytes.len()
    }

    pub fn bins(&self) -> usize {
        self.bytes.first().map_or(0, Vec::len)
    }

    pub fn add(&mut self, flow: u32, at: Nanos, bytes: u64) {
        let bin = (at / self.bin_width) as usize;
        self.bytes[flow as usize][bin] += bytes;
    }

    pub fn bin_bytes(&self, flow: u32, bin: usize) -> u64 {
        self.bytes[flow as usize][bin]
    }

    pub fn bin_start(&self, bin: usize) -> Nanos {
        bin as Nanos * self.bin_width
    }

    pub fn throughput_bps(&self, flow: u32, bin: usize) -> f64 {
        self.bin_bytes(flow, bin) as f64 * 8.0 / nanos_to_secs(self.bin_width)
    }

    pub fn delivered_bytes(&self, flow: u32) -> u64 {
        self.bytes[flow as usize].iter().sum()
    }

    /// Whole bins lying inside `[t0, t1)`.
    pub fn window_bins(&self, t0: Nanos, t1: Nanos) -> Result<std::ops::Range<usize>, MetricsError> {
        if t0 >= t1 || t1 > self.horizon {
            return Err(MetricsError::BadWindow {
                t0: nanos_to_secs(t0),
                t1: nanos_to_secs(t1),
                horizon: nanos_to_secs(self.horizon),
            });
        }
        let first = t0.div_ceil(self.bin_width) as usize;
        let last = (t1 / self.bin_width) as usize;
        if first >= last {
            return Err(MetricsError::NoBins { t0: nanos_to_secs(t0), t1: nanos_to_secs(t1) });
        }
        Ok(first..last)
    }

    /// Mean throughput over the whole bins of `[t0, t1)`.
    pub fn window_mean_bps(&self, flow: u32, t0: Nanos, t1: Nanos) -> Result<f64, MetricsError> {
        let bins = self.window_bins(t0, t1)?;
        let n = bins.len();
        let bytes: u64 = self.bytes[flow as usize][bins].iter().sum();
        Ok(bytes as f64 * 8.0 / (n as f64 * nanos_to_secs(self.bin_width)))
    }
}

/// Observer that bins departures while a run streams by.
#[derive(Debug, Clone)]
pub struct SeriesRecorder {
    bin_width: Nanos,
    series: Option<ThroughputSeries>,
}

impl SeriesRecorder {
    pub fn new(bin_width: Nanos) -> Self {
        assert!(bin_width > 0, "bin width must be positive");
        Self { bin_width, series: None }
    }

    pub fn into_series(self) -> ThroughputSeries {
        self.series.expect("recorder never started")
    }
}

impl Observer for SeriesRecorder {
    fn on_start(&mut self, subscribers: usize, horizon: Nanos) {
        self.series = Some(ThroughputSeries::new(subscribers, self.bin_width, horizon));
    }

    fn on_departure(&mut self, pkt: &Packet, at: Nanos) {
        if let Some(s) = &mut self.series {
            s.add(pkt.subscriber, at, pkt.size_bytes as u64);
        }
    }
}

pub fn bin_throughput(log: &EventLog, bin_width: Nanos) -> Result<ThroughputSeries, MetricsError> {
    if bin_width == 0 {
        return Err(MetricsError::BadBinWidth);
    }
    let mut s = ThroughputSeries::new(log.subscribers(), bin_width, log.horizon());
    for r in log.records() {
        if let Some(d) = r.departure {
            s.add(r.subscriber, d, r.size_bytes as u64);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSummary {
    pub mean_bps: f64,
    /// Half-width of the 95% Student-t interval; absent with a single run.
    pub ci95_bps: Option<f64>,
    pub per_run_bps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSummary {
    pub window: (Nanos, Nanos),
    pub runs: usize,
    pub flows: Vec<FlowSummary>,
}

/// Mean and 95% confidence half-width of independent samples.
pub fn mean_ci95(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

pub fn summarize(window: (Nanos, Nanos), runs: &[ThroughputSeries]) -> Result<WindowSummary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    if runs
        .iter()
        .any(|r| r.flows() != first.flows() || r.bin_width != first.bin_width || r.horizon != first.horizon)
    {
        return Err(MetricsError::Mismatch);
    }
    first.window_bins(window.0, window.1)?;
    let flows = (0..first.flows() as u32)
        .map(|f| {
            let per_run_bps: Vec<f64> =
                runs.iter().map(|r| r.window_mean_bps(f, window.0, window.1).expect("checked")).collect();
            let (mean_bps, ci95_bps) = mean_ci95(&per_run_bps);
            FlowSummary { mean_bps, ci95_bps, per_run_bps }
        })
        .collect();
    Ok(WindowSummary { window, runs: runs.len(), flows })
}

/// Parses `t0:t1` in seconds.
pub fn parse_window(s: &str) -> Option<(Nanos, Nanos)> {
    let (a, b) = s.split_once(':')?;
    let a: f64 = a.trim().parse().ok()?;
    let b: f64 = b.trim().parse().ok()?;
    (a >= 0.0 && b > a && b.is_finite()).then(|| (secs_to_nanos(a), secs_to_nanos(b)))
}

/// Writes `run,flow,bin_start_s,throughput_bps`, runs in the given order.
pub fn write_series_csv<W: io::Write>(w: W, runs: &[ThroughputSeries]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "flow", "bin_start_s", "throughput_bps"])?;
    for (run, s) in runs.iter().enumerate() {
        for flow in 0..s.flows() as u32 {
            for bin in 0..s.bins() {
                out.write_record([
                    run.to_string(),
                    flow.to_string(),
                    nanos_to_secs(s.bin_start(bin)).to_string(),
                    s.throughput_bps(flow, bin).to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `flow,mean_bps,ci95_bps`; the interval is empty for a single run.
pub fn write_summary_csv<W: io::Write>(w: W, summary: &WindowSummary) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["flow", "mean_bps", "ci95_bps"])?;
    for (flow, f) in summary.flows.iter().enumerate() {
        out.write_record([
            flow.to_string(),
            f.mean_bps.to_string(),
            f.ci95_bps.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a series file back. The horizon is taken to be the end of the last
/// bin.
pub fn read_series_csv<R: io::Read>(r: R) -> Result<Vec<ThroughputSeries>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(r);
    // (run, flow, bin start, bps) rows in file order.
    let mut rows: Vec<(usize, usize, f64, f64)> = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| MetricsError::Parse { line, message: format!("bad {what}") };
        let run: usize = field(0).parse().map_err(|_| bad("run"))?;
        let flow: usize = field(1).parse().map_err(|_| bad("flow"))?;
        let start: f64 = field(2).parse().map_err(|_| bad("bin_start_s"))?;
        let bps: f64 = field(3).parse().map_err(|_| bad("throughput_bps"))?;
        rows.push((run, flow, start, bps));
    }
    let runs = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let flows = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut starts: Vec<Nanos> = rows.iter().map(|r| secs_to_nanos(r.2)).collect();
    starts.sort_unstable();
    starts.dedup();
    let bin_width = match starts.as_slice() {
        [] => return Ok(vec![]),
        [_] => return Err(MetricsError::Parse { line: 0, message: "cannot infer bin width from one bin".into() }),
        [a, b, ..] => b - a,
    };
    let horizon = (*starts.last().expect("non-empty") + bin_width).max(bin_width);
    let secs = nanos_to_secs(bin_width);
    let mut out = vec![ThroughputSeries::new(flows, bin_width, horizon); runs];
    for (run, flow, start, bps) in rows {
        let bin = (secs_to_nanos(start) / bin_width) as usize;
        out[run].bytes[flow][bin] = (bps * secs / 8.0).round() as u64;
    }
    Ok(out)
}
