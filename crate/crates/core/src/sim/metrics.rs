//! Metrics recomputed from an event log alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::JobKind;
use crate::ids::{AgentId, JobId, TaskId};
use crate::resources::{ResourceVector, SimTime};

use super::event::{Event, EventLog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed log at record {index}: {reason}")]
pub struct MalformedLog {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub p50: SimTime,
    pub p90: SimTime,
    pub max: SimTime,
}

impl LatencyStats {
    /// Nearest-rank percentiles; `None` for an empty sample.
    pub fn from_samples(mut samples: Vec<SimTime>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        Some(LatencyStats {
            count: samples.len() as u64,
            p50: nearest_rank(&samples, 50),
            p90: nearest_rank(&samples, 90),
            max: *samples.last().expect("non-empty"),
        })
    }
}

pub fn nearest_rank(sorted: &[SimTime], percent: usize) -> SimTime {
    let rank = (percent * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferCounts {
    pub issued: u64,
    pub accepted: u64,
    pub declined: u64,
    pub expired: u64,
    pub rescinded: u64,
    pub rejected: u64,
}

/// Exact time integrals in milli-units × ms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integrals {
    pub cpu_allocated: u128,
    pub cpu_alive: u128,
    pub mem_allocated: u128,
    pub mem_alive: u128,
}

impl Integrals {
    pub fn accumulate(&mut self, dt: SimTime, allocated: &ResourceVector, alive: &ResourceVector) {
        let dt = dt as u128;
        self.cpu_allocated += dt * allocated.cpus.milli() as u128;
        self.cpu_alive += dt * alive.cpus.milli() as u128;
        self.mem_allocated += dt * allocated.mem.milli() as u128;
        self.mem_alive += dt * alive.mem.milli() as u128;
    }

    pub fn cpu_util(&self) -> f64 {
        ratio(self.cpu_allocated, self.cpu_alive)
    }

    pub fn mem_util(&self) -> f64 {
        ratio(self.mem_allocated, self.mem_alive)
    }
}

fn ratio(num: u128, den: u128) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration: SimTime,
    pub integrals: Integrals,
    pub cpu_util: f64,
    pub mem_util: f64,
    pub submitted: BTreeMap<JobKind, u64>,
    /// First-start latency of started jobs, per kind.
    pub latency: BTreeMap<JobKind, LatencyStats>,
    pub builds_completed: u64,
    pub offers: OfferCounts,
    /// Leader changes after the first election.
    pub failovers: u64,
}

impl MetricsReport {
    pub fn latency_of(&self, kind: JobKind) -> Option<&LatencyStats> {
        self.latency.get(&kind)
    }

    pub fn started(&self, kind: JobKind) -> u64 {
        self.latency.get(&kind).map_or(0, |l| l.count)
    }

    pub fn submitted(&self, kind: JobKind) -> u64 {
        self.submitted.get(&kind).copied().unwrap_or(0)
    }

    /// `(metric, value)` rows in a fixed order; absent latencies are empty.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("duration_ms".to_owned(), self.duration.to_string()),
            ("cpu_util".to_owned(), format!("{:.6}", self.cpu_util)),
            ("mem_util".to_owned(), format!("{:.6}", self.mem_util)),
            (
                "builds_completed".to_owned(),
                self.builds_completed.to_string(),
            ),
        ];
        for kind in JobKind::ALL {
            let l = self.latency_of(kind);
            let ms =
                |f: fn(&LatencyStats) -> SimTime| l.map(f).map_or(String::new(), |v| v.to_string());
            rows.push((
                format!("{kind}_submitted"),
                self.submitted(kind).to_string(),
            ));
            rows.push((format!("{kind}_started"), self.started(kind).to_string()));
            rows.push((format!("{kind}_latency_p50_ms"), ms(|l| l.p50)));
            rows.push((format!("{kind}_latency_p90_ms"), ms(|l| l.p90)));
            rows.push((format!("{kind}_latency_max_ms"), ms(|l| l.max)));
        }
        let o = &self.offers;
        for (name, v) in [
            ("offers_issued", o.issued),
            ("offers_accepted", o.accepted),
            ("offers_declined", o.declined),
            ("offers_expired", o.expired),
            ("offers_rescinded", o.rescinded),
            ("offers_rejected", o.rejected),
            ("failovers", self.failovers),
        ] {
            rows.push((name.to_owned(), v.to_string()));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).expect("in-memory csv");
        for (k, v) in self.rows() {
            w.write_record([k, v]).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is UTF-8")
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.rows() {
            let line = serde_json::json!({ "metric": k, "value": v });
            writeln!(out, "{line}").unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "simulated {:.1} h", self.duration as f64 / 3_600_000.0).unwrap();
        writeln!(s, "cpu utilization  {:.2}%", self.cpu_util * 100.0).unwrap();
        writeln!(s, "mem utilization  {:.2}%", self.mem_util * 100.0).unwrap();
        writeln!(s, "builds completed {}", self.builds_completed).unwrap();
        for kind in JobKind::ALL {
            match self.latency_of(kind) {
                Some(l) => writeln!(
                    s,
                    "{kind:<8} submitted {:>5} started {:>5}  wait p50 {:.1}s p90 {:.1}s max {:.1}s",
                    self.submitted(kind),
                    l.count,
                    l.p50 as f64 / 1000.0,
                    l.p90 as f64 / 1000.0,
                    l.max as f64 / 1000.0
                ),
                None => writeln!(s, "{kind:<8} submitted {:>5} started     0", self.submitted(kind)),
            }
            .unwrap();
        }
        let o = &self.offers;
        writeln!(
            s,
            "offers issued {} accepted {} declined {} expired {} rescinded {} rejected {}",
            o.issued, o.accepted, o.declined, o.expired, o.rescinded, o.rejected
        )
        .unwrap();
        writeln!(s, "failovers {}", self.failovers).unwrap();
        s
    }
}

struct LiveTask {
    agent: AgentId,
    resources: ResourceVector,
}

/// Recomputes the report from the log. Structural problems (ordering,
/// missing start or end markers, references to unknown entities) are errors.
pub fn compute_metrics(log: &EventLog) -> Result<MetricsReport, MalformedLog> {
    let records = log.records();
    let bad = |index: usize, reason: String| Err(MalformedLog { index, reason });

    let duration = match records.first().map(|r| &r.event) {
        Some(Event::SimStarted { duration, .. }) => *duration,
        _ => return bad(0, "log does not open with SimStarted".into()),
    };
    match records.last() {
        Some(r) if matches!(r.event, Event::SimEnded {}) && r.t == duration => {}
        _ => {
            return bad(
                records.len(),
                "log does not close with SimEnded at the duration".into(),
            )
        }
    }

    let mut report = MetricsReport {
        duration,
        ..MetricsReport::default()
    };
    let mut agents: BTreeMap<AgentId, (ResourceVector, bool)> = BTreeMap::new();
    let mut tasks: BTreeMap<TaskId, Option<LiveTask>> = BTreeMap::new();
    let mut jobs: BTreeMap<JobId, (JobKind, SimTime, bool)> = BTreeMap::new();
    let mut samples: BTreeMap<JobKind, Vec<SimTime>> = BTreeMap::new();
    let mut allocated = ResourceVector::ZERO;
    let mut alive = ResourceVector::ZERO;
    let mut elections = 0u64;
    let mut prev_t = 0;

    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return bad(i, format!("sequence number {} out of place", r.seq));
        }
        if r.t < prev_t || r.t > duration {
            return bad(i, format!("time {} out of order", r.t));
        }
        report
            .integrals
            .accumulate(r.t - prev_t, &allocated, &alive);
        prev_t = r.t;

        match &r.event {
            Event::SimStarted { .. } if i > 0 => return bad(i, "second SimStarted".into()),
            Event::SimEnded {} if i + 1 < records.len() => {
                return bad(i, "events after SimEnded".into())
            }
            Event::AgentRegistered { agent, total } => {
                if agents.insert(agent.clone(), (*total, true)).is_some() {
                    return bad(i, format!("agent {agent} registered twice"));
                }
                alive = alive + *total;
            }
            Event::AgentCrashed { agent } | Event::AgentRecovered { agent } => {
                let up = matches!(r.event, Event::AgentRecovered { .. });
                let Some((total, state)) = agents.get_mut(agent) else {
                    return bad(i, format!("unknown agent {agent}"));
                };
                if *state != up {
                    *state = up;
                    alive = if up {
                        alive + *total
                    } else {
                        match alive.checked_sub(total) {
                            Ok(v) => v,
                            Err(e) => return bad(i, e.to_string()),
                        }
                    };
                }
            }
            Event::TaskStaging {
                task,
                agent,
                resources,
                ..
            } => {
                match agents.get(agent) {
                    Some((_, true)) => {}
                    _ => {
                        return bad(
                            i,
                            format!("task {task} staged on unavailable agent {agent}"),
                        )
                    }
                }
                if tasks.contains_key(task) {
                    return bad(i, format!("task {task} staged twice"));
                }
                allocated = allocated + *resources;
                tasks.insert(
                    task.clone(),
                    Some(LiveTask {
                        agent: agent.clone(),
                        resources: *resources,
                    }),
                );
            }
            Event::TaskUpdate { task, state } => {
                let Some(slot) = tasks.get_mut(task) else {
                    return bad(i, format!("update for unknown task {task}"));
                };
                let Some(live) = slot else {
                    return bad(i, format!("update for terminated task {task}"));
                };
                if state.is_terminal() {
                    if !agents.contains_key(&live.agent) {
                        return bad(i, format!("task {task} on unknown agent"));
                    }
                    allocated = match allocated.checked_sub(&live.resources) {
                        Ok(v) => v,
                        Err(e) => return bad(i, e.to_string()),
                    };
                    *slot = None;
                }
            }
            Event::JobSubmitted { job, kind, .. } => {
                if jobs.insert(*job, (*kind, r.t, false)).is_some() {
                    return bad(i, format!("{job} submitted twice"));
                }
                *report.submitted.entry(*kind).or_default() += 1;
            }
            Event::JobStarted { job, .. } => {
                let Some((kind, submitted, started)) = jobs.get_mut(job) else {
                    return bad(i, format!("start of unknown {job}"));
                };
                if !*started {
                    *started = true;
                    samples.entry(*kind).or_default().push(r.t - *submitted);
                }
            }
            Event::JobFinished { job, .. } => {
                if !jobs.get(job).is_some_and(|j| j.2) {
                    return bad(i, format!("{job} finished without starting"));
                }
                report.builds_completed += 1;
            }
            Event::OfferIssued { .. } => report.offers.issued += 1,
            Event::OfferAccepted { .. } => report.offers.accepted += 1,
            Event::OfferDeclined { .. } => report.offers.declined += 1,
            Event::OfferExpired { .. } => report.offers.expired += 1,
            Event::OfferRescinded { .. } => report.offers.rescinded += 1,
            Event::OfferRejected { .. } => report.offers.rejected += 1,
            Event::LeaderElected { .. } => elections += 1,
            _ => {}
        }
    }

    report.cpu_util = report.integrals.cpu_util();
    report.mem_util = report.integrals.mem_util();
    report.latency = samples
        .into_iter()
        .filter_map(|(k, v)| LatencyStats::from_samples(v).map(|l| (k, l)))
        .collect();
    report.failovers = elections.saturating_sub(1);
    Ok(report)
}
