//! Operator commands: run a scenario, compare the two allocation policies,
//! and replay a stored event log.
//!
//! Every command returns `Result<(), CliError>`; the binary maps errors to
//! exit codes with [`CliError::exit_code`].

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::thread;

use clap::ValueEnum;
use thiserror::Error;

use offerfarm::build::JobKind;
use offerfarm::resources::SimTime;
use offerfarm::sim::{
    self, compute_metrics, EventLog, LogError, MetricsReport, Policy, Scenario, ScenarioError,
    SimError,
};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const COMPARE_FILE: &str = "compare.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Ndjson,
}

impl Format {
    pub fn metrics_file(self) -> &'static str {
        match self {
            Format::Csv => "metrics.csv",
            Format::Ndjson => "metrics.ndjson",
        }
    }

    fn render(self, report: &MetricsReport) -> String {
        match self {
            Format::Csv => report.to_csv(),
            Format::Ndjson => report.to_ndjson(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Simulation(SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: scenario has no staticMap to compare against")]
    MissingStaticMap { path: PathBuf },
    #[error("{path}: {reason}")]
    MalformedLog { path: PathBuf, reason: String },
    #[error("{path}: recomputed metrics differ from the stored file")]
    Mismatch { path: PathBuf },
    #[error("dynamic policy does not dominate for seeds {seeds:?}")]
    NotDominant { seeds: Vec<u64> },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) | CliError::MissingStaticMap { .. } => 2,
            CliError::MalformedLog { .. } => 2,
            CliError::Simulation(SimError::Scenario(_)) => 2,
            CliError::Simulation(SimError::InvariantViolation { .. })
            | CliError::Simulation(SimError::ZeroDelayCycle { .. }) => 3,
            CliError::Mismatch { .. } => 4,
            CliError::Simulation(SimError::Internal { .. })
            | CliError::Io { .. }
            | CliError::NotDominant { .. } => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Simulation(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub verify: bool,
    pub out: PathBuf,
    pub format: Format,
}

/// Runs one scenario and writes the event log, the metrics and a summary
/// into the output directory. Returns the summary text.
pub fn cmd_run(opts: &RunOptions) -> Result<String, CliError> {
    let scenario = Scenario::load(&opts.scenario)?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let output = sim::run_seeded(&scenario, seed, opts.verify)?;

    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    let events = opts.out.join(EVENTS_FILE);
    let file = File::create(&events).map_err(io_err(&events))?;
    output
        .log
        .write_ndjson(BufWriter::new(file))
        .map_err(io_err(&events))?;
    write_file(
        &opts.out.join(opts.format.metrics_file()),
        &opts.format.render(&output.report),
    )?;

    let summary = format!(
        "scenario {} (seed {seed}, {} policy, {} events)\n{}",
        scenario.name,
        scenario.policy.as_str(),
        output.log.len(),
        output.report.summary()
    );
    write_file(&opts.out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Dynamic,
    Tie,
    Static,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Dynamic => "dynamic",
            Verdict::Tie => "tie",
            Verdict::Static => "static",
        }
    }

    /// Dynamic dominates when it is no worse on cpu utilization and on p90
    /// PR-test latency; a missing latency counts as worse than any value.
    pub fn judge(dynamic: &MetricsReport, fixed: &MetricsReport) -> Self {
        let lat = |r: &MetricsReport| p90_pr(r).unwrap_or(SimTime::MAX);
        let (du, su) = (
            dynamic.integrals.cpu_allocated * fixed.integrals.cpu_alive,
            fixed.integrals.cpu_allocated * dynamic.integrals.cpu_alive,
        );
        let (dl, sl) = (lat(dynamic), lat(fixed));
        if du < su || dl > sl {
            Verdict::Static
        } else if du == su && dl == sl {
            Verdict::Tie
        } else {
            Verdict::Dynamic
        }
    }
}

fn p90_pr(r: &MetricsReport) -> Option<SimTime> {
    r.latency_of(JobKind::PrTest).map(|l| l.p90)
}

fn p50_pr(r: &MetricsReport) -> Option<SimTime> {
    r.latency_of(JobKind::PrTest).map(|l| l.p50)
}

#[derive(Clone, Debug)]
pub struct SeedComparison {
    pub seed: u64,
    pub dynamic: MetricsReport,
    pub fixed: MetricsReport,
    pub verdict: Verdict,
}

/// Runs every seed under both policies. Runs share nothing, so each one gets
/// its own thread.
pub fn compare(
    scenario: &Scenario,
    seeds: &[u64],
    verify: bool,
) -> Result<Vec<SeedComparison>, CliError> {
    let mut dynamic = scenario.clone();
    dynamic.policy = Policy::Dynamic;
    let mut fixed = scenario.clone();
    fixed.policy = Policy::Static;
    let results: Vec<(Result<_, SimError>, Result<_, SimError>)> = thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let d = s.spawn({
                    let dynamic = &dynamic;
                    move || sim::run_seeded(dynamic, seed, verify).map(|o| o.report)
                });
                let f = s.spawn({
                    let fixed = &fixed;
                    move || sim::run_seeded(fixed, seed, verify).map(|o| o.report)
                });
                (d, f)
            })
            .collect();
        handles
            .into_iter()
            .map(|(d, f)| {
                (
                    d.join().expect("run panicked"),
                    f.join().expect("run panicked"),
                )
            })
            .collect()
    });
    seeds
        .iter()
        .zip(results)
        .map(|(&seed, (d, f))| {
            let (dynamic, fixed) = (d?, f?);
            let verdict = Verdict::judge(&dynamic, &fixed);
            Ok(SeedComparison {
                seed,
                dynamic,
                fixed,
                verdict,
            })
        })
        .collect()
}

fn opt_ms(v: Option<SimTime>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `compare.csv` with one row per seed and policy; both rows of a
/// seed carry that seed's verdict.
pub fn write_compare_csv(path: &Path, rows: &[SeedComparison]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Io {
        path: path.to_owned(),
        source: e.into(),
    };
    w.write_record([
        "seed",
        "policy",
        "cpu_util",
        "mem_util",
        "p50_pr",
        "p90_pr",
        "builds_done",
        "verdict",
    ])
    .map_err(csv_err)?;
    for row in rows {
        for (policy, r) in [
            (Policy::Dynamic, &row.dynamic),
            (Policy::Static, &row.fixed),
        ] {
            w.write_record([
                row.seed.to_string(),
                policy.as_str().to_owned(),
                format!("{:.6}", r.cpu_util),
                format!("{:.6}", r.mem_util),
                opt_ms(p50_pr(r)),
                opt_ms(p90_pr(r)),
                r.builds_completed.to_string(),
                row.verdict.as_str().to_owned(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug)]
pub struct CompareOptions {
    pub scenario: PathBuf,
    /// Empty means five consecutive seeds starting at the scenario's own.
    pub seeds: Vec<u64>,
    pub verify: bool,
    pub out: PathBuf,
}

pub fn cmd_compare(opts: &CompareOptions) -> Result<Vec<SeedComparison>, CliError> {
    let scenario = Scenario::load(&opts.scenario)?;
    if scenario.static_map.is_none() {
        return Err(CliError::MissingStaticMap {
            path: opts.scenario.clone(),
        });
    }
    let seeds = if opts.seeds.is_empty() {
        (0..5).map(|i| scenario.seed + i).collect()
    } else {
        opts.seeds.clone()
    };
    let rows = compare(&scenario, &seeds, opts.verify)?;
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    write_compare_csv(&opts.out.join(COMPARE_FILE), &rows)?;

    Ok(rows)
}

/// A fixed-width table of the comparison, one line per seed.
pub fn compare_table(rows: &[SeedComparison]) -> String {
    let mut out = format!(
        "{:>6}  {:>9} {:>9}  {:>10} {:>10}  verdict\n",
        "seed", "cpu dyn", "cpu stat", "p90pr dyn", "p90pr stat"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>6}  {:>8.3}% {:>8.3}%  {:>10} {:>10}  {}\n",
            r.seed,
            r.dynamic.cpu_util * 100.0,
            r.fixed.cpu_util * 100.0,
            opt_ms(p90_pr(&r.dynamic)),
            opt_ms(p90_pr(&r.fixed)),
            r.verdict.as_str()
        ));
    }
    out
}

/// Fails with the seeds on which the static policy won.
pub fn require_dominance(rows: &[SeedComparison]) -> Result<(), CliError> {
    let losing: Vec<u64> = rows
        .iter()
        .filter(|r| r.verdict == Verdict::Static)
        .map(|r| r.seed)
        .collect();
    if losing.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotDominant { seeds: losing })
    }
}

#[derive(Clone, Debug)]
pub struct Replay {
    pub report: MetricsReport,
    /// Stored metrics files that matched the recomputation.
    pub matched: Vec<PathBuf>,
}

/// Recomputes the metrics of a stored log and byte-compares them with any
/// metrics file stored next to it.
pub fn cmd_replay(events: &Path) -> Result<Replay, CliError> {
    let file = File::open(events).map_err(io_err(events))?;
    let log = EventLog::read_ndjson(BufReader::new(file)).map_err(|e| match e {
        LogError::Io(source) => CliError::Io {
            path: events.to_owned(),
            source,
        },
        LogError::Malformed { .. } => CliError::MalformedLog {
            path: events.to_owned(),
            reason: e.to_string(),
        },
    })?;
    let report = compute_metrics(&log).map_err(|e| CliError::MalformedLog {
        path: events.to_owned(),
        reason: e.to_string(),
    })?;
    let mut matched = Vec::new();
    let dir = events.parent().unwrap_or(Path::new("."));
    for format in [Format::Csv, Format::Ndjson] {
        let stored = dir.join(format.metrics_file());
        if !stored.exists() {
            continue;
        }
        let text = fs::read_to_string(&stored).map_err(io_err(&stored))?;
        if text != format.render(&report) {
            return Err(CliError::Mismatch { path: stored });
        }
        matched.push(stored);
    }
    Ok(Replay { report, matched })
}
