use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accessq::engine::{run_with, EventLog};
use accessq::fair_rate::{solve_alpha, FairRateProblem};
use accessq::metrics::{
    parse_window, read_series_csv, summarize, write_series_csv, write_summary_csv, SeriesRecorder, ThroughputSeries,
    WindowSummary,
};
use accessq::runner::run_repetitions;
use accessq::scenario::{bundled, parse_scenario, DisciplineKind, Scenario};
use accessq::types::{nanos_to_secs, secs_to_nanos, Nanos};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "accessq", version, about = "Simulate traffic control disciplines on a shared access link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write throughput series, a window summary and a manifest.
    Run(RunArgs),
    /// Solve for the normalized fair rate and the resulting allocation.
    Oracle(OracleArgs),
    /// Summarize a previously written series file over a time window.
    Report(ReportArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Scenario file, or `builtin:<name>` for a bundled scenario
    /// (experiment1, experiment1_1g, burst).
    scenario: String,
    /// Override the scenario's discipline (rr_tbf, csfq_tbm, drr_tbm).
    #[arg(long, value_parser = parse_discipline)]
    discipline: Option<DisciplineKind>,
    #[arg(long)]
    repetitions: Option<u32>,
    /// Base seed; each repetition derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Throughput bin width in seconds.
    #[arg(long, default_value_t = 1.0)]
    bin: f64,
    /// Summary window `t0:t1` in seconds; defaults to the whole run.
    #[arg(long)]
    summary_window: Option<String>,
    /// Worker threads for repetitions (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, env = "ACCESSQ_OUT", default_value = "accessq-out")]
    out: PathBuf,
    /// Also write the per-packet log of every run (large).
    #[arg(long)]
    dump_log: bool,
}

#[derive(clap::Args, Debug)]
struct OracleArgs {
    /// Excess capacity in bits per second.
    capacity: f64,
    /// Weights, comma separated; `v x n` repeats (e.g. `2.5x4,5x4`).
    #[arg(long = "w", allow_hyphen_values = true)]
    weights: String,
    /// Non-conformant demands in bits per second, same syntax.
    #[arg(long = "d", allow_hyphen_values = true)]
    demands: String,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    /// A `series.csv` written by `run`.
    series: PathBuf,
    /// Window `t0:t1` in seconds.
    #[arg(long)]
    window: String,
    /// Write the summary CSV here instead of printing a table.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn parse_discipline(s: &str) -> Result<DisciplineKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Validation(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn load_scenario(spec: &str) -> Result<Scenario, Failure> {
    let text = match spec.strip_prefix("builtin:") {
        Some(name) => bundled::ALL
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| invalid(anyhow!("no bundled scenario named `{name}`")))?,
        None => fs::read_to_string(spec).with_context(|| format!("reading {spec}")).map_err(runtime)?,
    };
    parse_scenario(&text).map_err(|e| invalid(anyhow!("{spec}: {e}")))
}

#[derive(Serialize)]
struct Manifest {
    scenario: String,
    scenario_sha256: String,
    discipline: String,
    seed: u64,
    repetitions: u32,
    horizon_s: f64,
    bin_s: f64,
    summary_window_s: [f64; 2],
    build: String,
    files: Vec<String>,
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(k) = args.discipline {
        scenario.discipline.kind = k;
    }
    if let Some(r) = args.repetitions {
        scenario.repetitions = r;
    }
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    if let Some(h) = args.horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(anyhow!("--horizon must be positive")));
        }
        scenario.horizon = secs_to_nanos(h);
    }
    scenario.validate().map_err(|e| invalid(anyhow!("{e}")))?;
    if !(args.bin > 0.0 && args.bin.is_finite()) || secs_to_nanos(args.bin) == 0 {
        return Err(invalid(anyhow!("--bin must be positive")));
    }
    let bin: Nanos = secs_to_nanos(args.bin);
    let window = match &args.summary_window {
        Some(w) => parse_window(w).ok_or_else(|| invalid(anyhow!("--summary-window expects t0:t1 with t0 < t1")))?,
        None => (0, scenario.horizon),
    };
    ThroughputSeries::new(0, bin, scenario.horizon).window_bins(window.0, window.1).map_err(invalid)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(runtime)?;
    let mut files = vec!["series.csv".to_string(), "summary.csv".to_string()];

    let series: Vec<ThroughputSeries> = if args.dump_log {
        let runs = run_repetitions(scenario.repetitions, args.threads, |i| {
            run_with(&scenario, i, (SeriesRecorder::new(bin), EventLog::new()))
        })
        .map_err(invalid)?;
        let mut out = vec![];
        for (i, (rec, log)) in runs.into_iter().enumerate() {
            let name = format!("log-run{i}.csv");
            let f = create(&args.out.join(&name))?;
            log.write_csv(io::BufWriter::new(f)).map_err(runtime)?;
            files.push(name);
            out.push(rec.into_series());
        }
        out
    } else {
        run_repetitions(scenario.repetitions, args.threads, |i| {
            run_with(&scenario, i, SeriesRecorder::new(bin)).map(SeriesRecorder::into_series)
        })
        .map_err(invalid)?
    };

    write_series_csv(io::BufWriter::new(create(&args.out.join("series.csv"))?), &series).map_err(runtime)?;
    let summary = summarize(window, &series).map_err(invalid)?;
    write_summary_csv(io::BufWriter::new(create(&args.out.join("summary.csv"))?), &summary).map_err(runtime)?;

    let canonical = scenario.serialize();
    let manifest = Manifest {
        scenario: args.scenario.clone(),
        scenario_sha256: hex(&Sha256::digest(canonical.as_bytes())),
        discipline: scenario.discipline.kind.to_string(),
        seed: scenario.seed,
        repetitions: scenario.repetitions,
        horizon_s: nanos_to_secs(scenario.horizon),
        bin_s: nanos_to_secs(bin),
        summary_window_s: [nanos_to_secs(window.0), nanos_to_secs(window.1)],
        build: format!(
            "{} {} ({})",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            if cfg!(debug_assertions) { "debug" } else { "release" }
        ),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    fs::write(args.out.join("manifest.json"), json + "\n").map_err(runtime)?;

    print_summary(&summary);
    Ok(())
}

fn create(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display())).map_err(runtime)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn print_summary(s: &WindowSummary) {
    let mut out = io::stdout().lock();
    let _ = writeln!(
        out,
        "window {}..{} s, {} run(s)",
        nanos_to_secs(s.window.0),
        nanos_to_secs(s.window.1),
        s.runs
    );
    let _ = writeln!(out, "{:>5} {:>14} {:>14}", "flow", "mean Mb/s", "ci95 Mb/s");
    for (i, f) in s.flows.iter().enumerate() {
        let ci = f.ci95_bps.map_or("-".to_string(), |c| format!("{:.4}", c / 1e6));
        let _ = writeln!(out, "{:>5} {:>14.4} {:>14}", i, f.mean_bps / 1e6, ci);
    }
}

/// Parses `v1,v2x3,...` where `vxn` repeats `v` n times.
fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let mut out = vec![];
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (v, n) = match item.rsplit_once('x') {
            Some((v, n)) => (v, n.parse::<usize>().map_err(|_| format!("bad repeat count in `{item}`"))?),
            None => (item, 1),
        };
        let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
        out.extend(std::iter::repeat_n(v, n));
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

const ORACLE_USAGE: &str = "usage: accessq oracle <CAPACITY> --w <WEIGHTS> --d <DEMANDS>";

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let usage = |e: String| invalid(anyhow!("{e}\n{ORACLE_USAGE}"));
    let weights = parse_list(&args.weights).map_err(|e| usage(format!("--w: {e}")))?;
    let demands = parse_list(&args.demands).map_err(|e| usage(format!("--d: {e}")))?;
    let problem = FairRateProblem { excess_capacity_bps: args.capacity, demands_bps: demands, weights };
    let s = solve_alpha(&problem).map_err(|e| usage(e.to_string()))?;
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "alpha = {} b/s per unit weight", s.alpha);
    let _ = writeln!(out, "saturated = {}", s.saturated);
    let _ = writeln!(out, "{:>5} {:>10} {:>16} {:>16}", "flow", "weight", "demand_bps", "allocation_bps");
    for i in 0..problem.weights.len() {
        let _ = writeln!(
            out,
            "{:>5} {:>10} {:>16} {:>16.3}",
            i, problem.weights[i], problem.demands_bps[i], s.allocations_bps[i]
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let window = parse_window(&args.window).ok_or_else(|| invalid(anyhow!("--window expects t0:t1 with t0 < t1")))?;
    let f = fs::File::open(&args.series).with_context(|| format!("reading {}", args.series.display())).map_err(runtime)?;
    let series = read_series_csv(io::BufReader::new(f)).map_err(invalid)?;
    let summary = summarize(window, &series).map_err(invalid)?;
    match args.out {
        Some(p) => write_summary_csv(io::BufWriter::new(create(&p)?), &summary).map_err(runtime)?,
        None => print_summary(&summary),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_syntax() {
        assert_eq!(parse_list("2.5x2,5").unwrap(), vec![2.5, 2.5, 5.0]);
        assert_eq!(parse_list("13.5e6x2").unwrap(), vec![13.5e6, 13.5e6]);
        assert!(parse_list("").is_err());
        assert!(parse_list("1xq").is_err());
    }
}
