//! Scenario files.
//!
//! A scenario is a line-oriented text file with `[section]` headers. The
//! `topology`, `discipline` and `run` sections hold `key = value` lines; the
//! `subscribers` and `sources` sections hold one row per subscriber range:
//!
//! ```text
//! [topology]
//! access_rate = 100e6
//! rtt = 0.01
//!
//! [discipline]
//! kind = drr_tbm
//!
//! [run]
//! horizon = 240
//!
//! [subscribers]
//! 0-3 rate=2.5e6 bucket=1e6 queue=1e6
//!
//! [sources]
//! 0-3 cbr packet=1000 period=0.0005 start=0
//! ```
//!
//! Rates are bits per second, sizes bytes, times seconds. `#` starts a
//! comment. Parsing reports every problem found, not just the first.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::traffic::{BurstConfig, CbrConfig, SourceSpec, TcpConfig};
use crate::types::{nanos_to_secs, secs_to_nanos, LinkConfig, Nanos, SubscriberContract};

pub mod bundled {
    pub const EXPERIMENT1: &str = include_str!("../scenarios/experiment1.scenario");
    pub const EXPERIMENT1_1G: &str = include_str!("../scenarios/experiment1_1g.scenario");
    pub const BURST: &str = include_str!("../scenarios/burst.scenario");

    pub const ALL: [(&str, &str); 3] =
        [("experiment1", EXPERIMENT1), ("experiment1_1g", EXPERIMENT1_1G), ("burst", BURST)];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DisciplineKind {
    RrTbf,
    CsfqTbm,
    DrrTbm,
}

impl DisciplineKind {
    pub const ALL: [DisciplineKind; 3] = [DisciplineKind::RrTbf, DisciplineKind::CsfqTbm, DisciplineKind::DrrTbm];

    pub fn as_str(&self) -> &'static str {
        match self {
            DisciplineKind::RrTbf => "rr_tbf",
            DisciplineKind::CsfqTbm => "csfq_tbm",
            DisciplineKind::DrrTbm => "drr_tbm",
        }
    }
}

impl fmt::Display for DisciplineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisciplineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rr_tbf" => Ok(DisciplineKind::RrTbf),
            "csfq_tbm" => Ok(DisciplineKind::CsfqTbm),
            "drr_tbm" => Ok(DisciplineKind::DrrTbm),
            _ => Err(format!("unknown discipline `{s}` (expected rr_tbf, csfq_tbm or drr_tbm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub backbone_rate_bps: u64,
    pub access: LinkConfig,
    pub uni_rate_bps: u64,
    pub rtt: Nanos,
    pub max_packet_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsfqParams {
    pub k: Nanos,
    pub k_alpha: Nanos,
    pub fifo_bytes: u64,
    pub amendment_threshold: u64,
}

impl Default for CsfqParams {
    fn default() -> Self {
        Self { k: 100_000_000, k_alpha: 200_000_000, fifo_bytes: 16_000_000, amendment_threshold: 64_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisciplineConfig {
    pub kind: DisciplineKind,
    pub csfq: CsfqParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceBinding {
    pub subscriber: u32,
    pub spec: SourceSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub topology: Topology,
    pub discipline: DisciplineConfig,
    pub subscribers: Vec<SubscriberContract>,
    pub sources: Vec<SourceBinding>,
    pub horizon: Nanos,
    pub repetitions: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ScenarioError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} problem(s) in scenario", self.issues.len())?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Issues(Vec<Issue>);

impl Issues {
    fn push(&mut self, line: Option<usize>, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Issue { line, field: field.into(), message: message.into() });
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("`{v}` is not a number"))
}

fn parse_u64(v: &str) -> Result<u64, String> {
    let x = parse_f64(v)?;
    if x < 0.0 || x.fract() != 0.0 || x > 9.007_199_254_740_992e15 {
        return Err(format!("`{v}` is not a non-negative integer"));
    }
    Ok(x as u64)
}

fn parse_positive_u64(v: &str) -> Result<u64, String> {
    match parse_u64(v)? {
        0 => Err("must be positive".into()),
        x => Ok(x),
    }
}

fn parse_secs(v: &str) -> Result<Nanos, String> {
    let x = parse_f64(v)?;
    if x < 0.0 {
        return Err(format!("`{v}` is negative"));
    }
    Ok(secs_to_nanos(x))
}

fn parse_ids(v: &str) -> Result<(u32, u32), String> {
    let bad = || format!("`{v}` is not a subscriber id or range like 0-3");
    let (a, b) = match v.split_once('-') {
        Some((a, b)) => (a, b),
        None => (v, v),
    };
    let a: u32 = a.parse().map_err(|_| bad())?;
    let b: u32 = b.parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok((a, b))
}

/// Key/value pairs of one row or section, consumed field by field so that
/// leftovers can be reported as unknown.
struct Fields {
    section: &'static str,
    entries: Vec<(usize, String, String, bool)>,
}

impl Fields {
    fn new(section: &'static str) -> Self {
        Self { section, entries: vec![] }
    }

    fn add(&mut self, line: usize, key: &str, value: &str, issues: &mut Issues) {
        if self.entries.iter().any(|e| e.1 == key) {
            issues.push(Some(line), format!("{}.{key}", self.section), "given more than once");
            return;
        }
        self.entries.push((line, key.to_string(), value.to_string(), false));
    }

    fn take<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>, issues: &mut Issues) -> Option<Option<T>> {
        let Some(e) = self.entries.iter_mut().find(|e| e.1 == key) else { return Some(None) };
        e.3 = true;
        match parse(&e.2) {
            Ok(v) => Some(Some(v)),
            Err(msg) => {
                issues.push(Some(e.0), format!("{}.{key}", self.section), msg);
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>, at: Option<usize>, issues: &mut Issues) -> Option<T> {
        match self.take(key, parse, issues)? {
            Some(v) => Some(v),
            None => {
                issues.push(at, format!("{}.{key}", self.section), "required field missing");
                None
            }
        }
    }

    fn optional<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>, default: T, issues: &mut Issues) -> Option<T> {
        self.take(key, parse, issues).map(|v| v.unwrap_or(default))
    }

    fn finish(self, issues: &mut Issues) {
        for (line, key, _, used) in self.entries {
            if !used {
                issues.push(Some(line), format!("{}.{key}", self.section), "unknown key");
            }
        }
    }
}

struct Row {
    line: usize,
    ids: (u32, u32),
    kind: Option<String>,
    fields: Fields,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Topology,
    Discipline,
    Run,
    Subscribers,
    Sources,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut issues = Issues::default();
    let mut topo = Fields::new("topology");
    let mut disc = Fields::new("discipline");
    let mut run = Fields::new("run");
    let mut sub_rows: Vec<Row> = vec![];
    let mut src_rows: Vec<Row> = vec![];
    let mut section: Option<Section> = None;
    let mut seen = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "topology" => Some(Section::Topology),
                "discipline" => Some(Section::Discipline),
                "run" => Some(Section::Run),
                "subscribers" => Some(Section::Subscribers),
                "sources" => Some(Section::Sources),
                other => {
                    issues.push(Some(line), other, "unknown section");
                    None
                }
            };
            if let Some(s) = section {
                if !seen.insert(name.trim().to_string()) {
                    issues.push(Some(line), name.trim(), "section given more than once");
                }
                let _ = s;
            }
            continue;
        }
        match section {
            None => issues.push(Some(line), "", "content outside of any known section"),
            Some(s @ (Section::Topology | Section::Discipline | Section::Run)) => {
                let Some((k, v)) = content.split_once('=') else {
                    issues.push(Some(line), "", "expected `key = value`");
                    continue;
                };
                let f = match s {
                    Section::Topology => &mut topo,
                    Section::Discipline => &mut disc,
                    _ => &mut run,
                };
                f.add(line, k.trim(), v.trim(), &mut issues);
            }
            Some(s @ (Section::Subscribers | Section::Sources)) => {
                let mut tokens = content.split_whitespace();
                let name = if s == Section::Sources { "sources" } else { "subscribers" };
                let ids = match parse_ids(tokens.next().unwrap_or("")) {
                    Ok(ids) => ids,
                    Err(m) => {
                        issues.push(Some(line), name, m);
                        continue;
                    }
                };
                let mut kind = None;
                let mut fields = Fields::new(name);
                for tok in tokens {
                    match tok.split_once('=') {
                        Some((k, v)) => fields.add(line, k, v, &mut issues),
                        None if s == Section::Sources && kind.is_none() => kind = Some(tok.to_string()),
                        None => issues.push(Some(line), name, format!("unexpected token `{tok}`")),
                    }
                }
                let row = Row { line, ids, kind, fields };
                if s == Section::Sources {
                    src_rows.push(row);
                } else {
                    sub_rows.push(row);
                }
            }
        }
    }

    let access_rate = topo.required("access_rate", parse_positive_u64, None, &mut issues);
    let access_delay = topo.optional("access_delay", parse_secs, 0, &mut issues);
    let backbone = topo.optional("backbone_rate", parse_positive_u64, 10_000_000_000, &mut issues);
    let uni = topo.optional("uni_rate", parse_positive_u64, 0, &mut issues);
    let rtt = topo.optional("rtt", parse_secs, 10_000_000, &mut issues);
    let max_packet = topo.optional("max_packet", |v| parse_positive_u64(v).map(|x| x as u32), 1500, &mut issues);
    topo.finish(&mut issues);

    let kind = disc.required("kind", |v| v.parse::<DisciplineKind>(), None, &mut issues);
    let d = CsfqParams::default();
    let quanta = disc.optional(
        "quanta",
        |v| if v == "proportional" { Ok(()) } else { Err(format!("unknown quanta policy `{v}`")) },
        (),
        &mut issues,
    );
    let k = disc.optional("k", parse_secs, d.k, &mut issues);
    let k_alpha = disc.optional("k_alpha", parse_secs, d.k_alpha, &mut issues);
    let fifo = disc.optional("fifo", parse_positive_u64, d.fifo_bytes, &mut issues);
    let thr = disc.optional("amendment_threshold", parse_u64, d.amendment_threshold, &mut issues);
    disc.finish(&mut issues);

    let horizon = run.required("horizon", parse_secs, None, &mut issues);
    let repetitions = run.optional("repetitions", |v| parse_positive_u64(v).map(|x| x as u32), 1, &mut issues);
    let seed = run.optional("seed", parse_u64, 0, &mut issues);
    run.finish(&mut issues);

    let mut subscribers: Vec<Option<(usize, SubscriberContract)>> = vec![];
    if sub_rows.is_empty() {
        issues.push(None, "subscribers", "at least one subscriber is required");
    }
    for mut row in sub_rows {
        let at = Some(row.line);
        let rate = row.fields.required("rate", parse_positive_u64, at, &mut issues);
        let bucket = row.fields.required("bucket", parse_positive_u64, at, &mut issues);
        let queue = row.fields.optional("queue", parse_positive_u64, 1_000_000, &mut issues);
        row.fields.finish(&mut issues);
        let (Some(rate), Some(bucket), Some(queue)) = (rate, bucket, queue) else { continue };
        let c = SubscriberContract { token_rate_bps: rate, bucket_bytes: bucket, queue_bytes: queue };
        for id in row.ids.0..=row.ids.1 {
            let id = id as usize;
            if subscribers.len() <= id {
                subscribers.resize(id + 1, None);
            }
            if subscribers[id].is_some() {
                issues.push(at, "subscribers", format!("duplicate subscriber id {id}"));
            }
            subscribers[id] = Some((row.line, c));
        }
    }
    if let Some(gap) = subscribers.iter().position(Option::is_none) {
        issues.push(None, "subscribers", format!("subscriber ids must be contiguous from 0; {gap} is missing"));
    }

    let mut sources = vec![];
    for mut row in src_rows {
        let at = Some(row.line);
        let spec = match row.kind.as_deref() {
            Some("cbr") => {
                let packet = row.fields.required("packet", parse_positive_u64, at, &mut issues);
                let period = row.fields.required("period", parse_secs, at, &mut issues);
                let start = row.fields.optional("start", parse_secs, 0, &mut issues);
                let stop = row.fields.optional("stop", |v| parse_secs(v).map(Some), None, &mut issues);
                if period == Some(0) {
                    issues.push(at, "sources.period", "must be positive");
                }
                match (packet, period, start, stop) {
                    (Some(p), Some(period), Some(start), Some(stop)) if period > 0 => {
                        Some(SourceSpec::Cbr(CbrConfig { packet_bytes: p as u32, period, start, stop }))
                    }
                    _ => None,
                }
            }
            Some("burst") => {
                let bytes = row.fields.required("bytes", parse_positive_u64, at, &mut issues);
                let packet = row.fields.required("packet", parse_positive_u64, at, &mut issues);
                let start = row.fields.optional("start", parse_secs, 0, &mut issues);
                let rate = row.fields.optional("rate", |v| parse_positive_u64(v).map(Some), None, &mut issues);
                match (bytes, packet, start, rate) {
                    (Some(b), Some(p), Some(start), Some(rate)) => Some(SourceSpec::Burst(BurstConfig {
                        burst_bytes: b,
                        packet_bytes: p as u32,
                        start,
                        // Backbone rate unless given.
                        injection_rate_bps: rate.or(backbone.filter(|_| true)).unwrap_or(10_000_000_000),
                    })),
                    _ => None,
                }
            }
            Some("tcp") => {
                let packet = row.fields.required("packet", parse_positive_u64, at, &mut issues);
                let start = row.fields.optional("start", parse_secs, 0, &mut issues);
                match (packet, start) {
                    (Some(p), Some(start)) => Some(SourceSpec::Tcp(TcpConfig { packet_bytes: p as u32, start })),
                    _ => None,
                }
            }
            Some(other) => {
                issues.push(at, "sources", format!("unknown source kind `{other}` (expected cbr, burst or tcp)"));
                None
            }
            None => {
                issues.push(at, "sources", "missing source kind");
                None
            }
        };
        row.fields.finish(&mut issues);
        if let Some(spec) = spec {
            for id in row.ids.0..=row.ids.1 {
                if id as usize >= subscribers.len() || subscribers[id as usize].is_none() {
                    issues.push(at, "sources", format!("source bound to undeclared subscriber {id}"));
                }
                sources.push(SourceBinding { subscriber: id, spec });
            }
        }
    }

    if !issues.0.is_empty() {
        return Err(ScenarioError { issues: issues.0 });
    }
    let access_rate = access_rate.expect("checked");
    let scenario = Scenario {
        topology: Topology {
            backbone_rate_bps: backbone.expect("checked"),
            access: LinkConfig { capacity_bps: access_rate, propagation_delay: access_delay.expect("checked") },
            uni_rate_bps: match uni.expect("checked") {
                0 => access_rate,
                u => u,
            },
            rtt: rtt.expect("checked"),
            max_packet_bytes: max_packet.expect("checked"),
        },
        discipline: DisciplineConfig {
            kind: kind.expect("checked"),
            csfq: CsfqParams {
                k: k.expect("checked"),
                k_alpha: k_alpha.expect("checked"),
                fifo_bytes: fifo.expect("checked"),
                amendment_threshold: thr.expect("checked"),
            },
        },
        subscribers: subscribers.into_iter().map(|s| s.expect("checked").1).collect(),
        sources,
        horizon: horizon.expect("checked"),
        repetitions: repetitions.expect("checked"),
        seed: seed.expect("checked"),
    };
    let _ = quanta;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Semantic checks that apply to scenarios however they were built.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Issues::default();
        let t = &self.topology;
        if t.access.capacity_bps == 0 {
            issues.push(None, "topology.access_rate", "must be positive");
        }
        if t.backbone_rate_bps == 0 {
            issues.push(None, "topology.backbone_rate", "must be positive");
        }
        if t.uni_rate_bps == 0 {
            issues.push(None, "topology.uni_rate", "must be positive");
        }
        if t.max_packet_bytes == 0 {
            issues.push(None, "topology.max_packet", "must be positive");
        }
        if self.horizon == 0 {
            issues.push(None, "run.horizon", "must be positive");
        }
        if self.repetitions == 0 {
            issues.push(None, "run.repetitions", "must be positive");
        }
        if self.subscribers.is_empty() {
            issues.push(None, "subscribers", "at least one subscriber is required");
        }
        let c = &self.discipline.csfq;
        if c.fifo_bytes < t.max_packet_bytes as u64 {
            issues.push(None, "discipline.fifo", "smaller than the maximum packet size");
        }
        for (i, s) in self.subscribers.iter().enumerate() {
            if s.token_rate_bps == 0 {
                issues.push(None, format!("subscribers[{i}].rate"), "must be positive");
            }
            if s.bucket_bytes < t.max_packet_bytes as u64 {
                issues.push(None, format!("subscribers[{i}].bucket"), "smaller than the maximum packet size");
            }
            if s.queue_bytes < t.max_packet_bytes as u64 {
                issues.push(None, format!("subscribers[{i}].queue"), "smaller than the maximum packet size");
            }
        }
        for (k, b) in self.sources.iter().enumerate() {
            if b.subscriber as usize >= self.subscribers.len() {
                issues.push(None, format!("sources[{k}]"), format!("bound to undeclared subscriber {}", b.subscriber));
            }
            let size = b.spec.packet_bytes();
            if size == 0 || size > t.max_packet_bytes {
                issues.push(None, format!("sources[{k}].packet"), format!("must be in 1..={}", t.max_packet_bytes));
            }
            match b.spec {
                SourceSpec::Cbr(c) if c.period == 0 => issues.push(None, format!("sources[{k}].period"), "must be positive"),
                SourceSpec::Burst(c) if c.injection_rate_bps == 0 => {
                    issues.push(None, format!("sources[{k}].rate"), "must be positive")
                }
                _ => {}
            }
        }
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { issues: issues.0 })
        }
    }

    /// Canonical text form; `parse_scenario(&s.serialize())` returns `s`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let t = &self.topology;
        let c = &self.discipline.csfq;
        let _ = writeln!(out, "[topology]");
        let _ = writeln!(out, "access_rate = {}", num(t.access.capacity_bps));
        let _ = writeln!(out, "access_delay = {}", secs(t.access.propagation_delay));
        let _ = writeln!(out, "backbone_rate = {}", num(t.backbone_rate_bps));
        let _ = writeln!(out, "uni_rate = {}", num(t.uni_rate_bps));
        let _ = writeln!(out, "rtt = {}", secs(t.rtt));
        let _ = writeln!(out, "max_packet = {}", num(t.max_packet_bytes as u64));
        let _ = writeln!(out, "\n[discipline]");
        let _ = writeln!(out, "kind = {}", self.discipline.kind);
        let _ = writeln!(out, "quanta = proportional");
        let _ = writeln!(out, "k = {}", secs(c.k));
        let _ = writeln!(out, "k_alpha = {}", secs(c.k_alpha));
        let _ = writeln!(out, "fifo = {}", num(c.fifo_bytes));
        let _ = writeln!(out, "amendment_threshold = {}", num(c.amendment_threshold));
        let _ = writeln!(out, "\n[run]");
        let _ = writeln!(out, "horizon = {}", secs(self.horizon));
        let _ = writeln!(out, "repetitions = {}", self.repetitions);
        let _ = writeln!(out, "seed = {}", self.seed);

        let _ = writeln!(out, "\n[subscribers]");
        for (a, b, s) in runs(self.subscribers.iter().enumerate().map(|(i, s)| (i as u32, *s))) {
            let _ = writeln!(
                out,
                "{} rate={} bucket={} queue={}",
                ids(a, b),
                num(s.token_rate_bps),
                num(s.bucket_bytes),
                num(s.queue_bytes)
            );
        }

        let _ = writeln!(out, "\n[sources]");
        for (a, b, spec) in runs(self.sources.iter().map(|s| (s.subscriber, s.spec))) {
            let body = match spec {
                SourceSpec::Cbr(c) => {
                    let mut s = format!("cbr packet={} period={} start={}", c.packet_bytes, secs(c.period), secs(c.start));
                    if let Some(stop) = c.stop {
                        let _ = write!(s, " stop={}", secs(stop));
                    }
                    s
                }
                SourceSpec::Burst(c) => format!(
                    "burst bytes={} packet={} start={} rate={}",
                    num(c.burst_bytes),
                    c.packet_bytes,
                    secs(c.start),
                    num(c.injection_rate_bps)
                ),
                SourceSpec::Tcp(c) => format!("tcp packet={} start={}", c.packet_bytes, secs(c.start)),
            };
            let _ = writeln!(out, "{} {}", ids(a, b), body);
        }
        out
    }

    pub fn weights(&self) -> Vec<f64> {
        self.subscribers.iter().map(SubscriberContract::weight).collect()
    }
}

/// Groups consecutive ids carrying equal values.
fn runs<T: PartialEq + Copy>(items: impl Iterator<Item = (u32, T)>) -> Vec<(u32, u32, T)> {
    let mut out: Vec<(u32, u32, T)> = vec![];
    for (id, v) in items {
        match out.last_mut() {
            Some(last) if last.2 == v && last.1 + 1 == id => last.1 = id,
            _ => out.push((id, id, v)),
        }
    }
    out
}

fn ids(a: u32, b: u32) -> String {
    if a == b {
        a.to_string()
    } else {
        format!("{a}-{b}")
    }
}

fn num(x: u64) -> String {
    if x < 10_000 {
        x.to_string()
    } else {
        format!("{:e}", x as f64)
    }
}

fn secs(t: Nanos) -> String {
    format!("{}", nanos_to_secs(t))
}
