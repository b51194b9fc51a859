//! The replayable event log: one JSON object per line, totally ordered by
//! `(t, seq)`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::JobKind;
use crate::ids::{AgentId, AppId, BuilderId, FrameworkId, JobId, MasterId, OfferId, TaskId};
use crate::master::OfferScope;
use crate::resources::{ResourceVector, SimTime, TaskState};

use super::scenario::Policy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    SimStarted {
        name: String,
        seed: u64,
        policy: Policy,
        duration: SimTime,
    },
    AgentRegistered {
        agent: AgentId,
        total: ResourceVector,
    },
    AgentCrashed {
        agent: AgentId,
    },
    AgentRecovered {
        agent: AgentId,
    },
    MasterCrashed {
        master: MasterId,
        leader_lost: bool,
    },
    MasterRecovered {
        master: MasterId,
    },
    QuorumLost {
        alive: usize,
    },
    LeaderElected {
        leader: MasterId,
        epoch: u64,
    },
    OfferIssued {
        offer: OfferId,
        agent: AgentId,
        framework: FrameworkId,
        resources: ResourceVector,
        scope: OfferScope,
    },
    OfferAccepted {
        offer: OfferId,
        framework: FrameworkId,
        tasks: usize,
    },
    OfferDeclined {
        offer: OfferId,
        framework: FrameworkId,
    },
    OfferExpired {
        offer: OfferId,
    },
    OfferRescinded {
        offer: OfferId,
        reason: String,
    },
    OfferRejected {
        offer: OfferId,
        reason: String,
    },
    /// A framework with new work dropped its decline filters.
    OffersRevived {
        framework: FrameworkId,
        filters: usize,
    },
    TaskStaging {
        task: TaskId,
        framework: FrameworkId,
        agent: AgentId,
        resources: ResourceVector,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image: Option<String>,
        /// Host ports bound by a service instance.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        ports: Vec<u16>,
    },
    TaskUpdate {
        task: TaskId,
        state: TaskState,
    },
    InstanceHung {
        task: TaskId,
    },
    InstanceUnhealthy {
        task: TaskId,
    },
    /// A failure injection or operation that had nothing to act on.
    ActionSkipped {
        target: String,
        reason: String,
    },
    AppDeployed {
        app: AppId,
        version: u64,
        instances: u32,
    },
    JobSubmitted {
        job: JobId,
        kind: JobKind,
        label: String,
    },
    JobStarted {
        job: JobId,
        builder: BuilderId,
        attempt: u32,
    },
    JobFinished {
        job: JobId,
        builder: BuilderId,
    },
    JobRequeued {
        job: JobId,
    },
    BuilderReaped {
        builder: BuilderId,
    },
    ProxyPublished {
        rendered_at: SimTime,
        backends: usize,
        text: String,
    },
    SimEnded {},
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::SimStarted { .. } => "SimStarted",
            Event::AgentRegistered { .. } => "AgentRegistered",
            Event::AgentCrashed { .. } => "AgentCrashed",
            Event::AgentRecovered { .. } => "AgentRecovered",
            Event::MasterCrashed { .. } => "MasterCrashed",
            Event::MasterRecovered { .. } => "MasterRecovered",
            Event::QuorumLost { .. } => "QuorumLost",
            Event::LeaderElected { .. } => "LeaderElected",
            Event::OfferIssued { .. } => "OfferIssued",
            Event::OfferAccepted { .. } => "OfferAccepted",
            Event::OfferDeclined { .. } => "OfferDeclined",
            Event::OfferExpired { .. } => "OfferExpired",
            Event::OfferRescinded { .. } => "OfferRescinded",
            Event::OfferRejected { .. } => "OfferRejected",
            Event::OffersRevived { .. } => "OffersRevived",
            Event::TaskStaging { .. } => "TaskStaging",
            Event::TaskUpdate { .. } => "TaskUpdate",
            Event::InstanceHung { .. } => "InstanceHung",
            Event::InstanceUnhealthy { .. } => "InstanceUnhealthy",
            Event::ActionSkipped { .. } => "ActionSkipped",
            Event::AppDeployed { .. } => "AppDeployed",
            Event::JobSubmitted { .. } => "JobSubmitted",
            Event::JobStarted { .. } => "JobStarted",
            Event::JobFinished { .. } => "JobFinished",
            Event::JobRequeued { .. } => "JobRequeued",
            Event::BuilderReaped { .. } => "BuilderReaped",
            Event::ProxyPublished { .. } => "ProxyPublished",
            Event::SimEnded {} => "SimEnded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: SimTime,
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read event log: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    /// Appends at time `t`; the sequence number is the record's index.
    pub fn push(&mut self, t: SimTime, event: Event) {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord { t, seq, event });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parses records without checking their ordering; see
    /// [`super::compute_metrics`] for structural validation.
    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, LogError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord =
                serde_json::from_str(&line).map_err(|e| LogError::Malformed {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        Ok(EventLog { records })
    }

    pub fn from_records(records: Vec<LogRecord>) -> Self {
        EventLog { records }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let mut log = EventLog::new();
        log.push(
            5,
            Event::TaskUpdate {
                task: TaskId::new("t1"),
                state: TaskState::Running,
            },
        );
        log.push(7, Event::SimEnded {});
        assert_eq!(
            log.to_ndjson(),
            "{\"t\":5,\"seq\":0,\"kind\":\"TaskUpdate\",\"payload\":{\"task\":\"t1\",\"state\":\"Running\"}}\n\
             {\"t\":7,\"seq\":1,\"kind\":\"SimEnded\",\"payload\":{}}\n"
        );
    }

    #[test]
    fn round_trip_through_text() {
        let mut log = EventLog::new();
        log.push(
            0,
            Event::OfferIssued {
                offer: OfferId(3),
                agent: AgentId::new("a1"),
                framework: FrameworkId::new("jenkins"),
                resources: ResourceVector::from_f64(4.0, 7782.4).unwrap(),
                scope: OfferScope::Queue("slc6-pr".into()),
            },
        );
        log.push(
            1,
            Event::ProxyPublished {
                rendered_at: 1,
                backends: 0,
                text: "# rendered at 1\nfrontend http-in\n".into(),
            },
        );
        let text = log.to_ndjson();
        let back = EventLog::read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_ndjson(), text);
    }

    #[test]
    fn garbage_lines_are_reported() {
        let err = EventLog::read_ndjson("{\"t\":0}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LogError::Malformed { line: 1, .. }));
    }
}
