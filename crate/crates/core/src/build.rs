//! Elastic CI builds: labeled queues, builders provisioned from offers, FIFO
//! job assignment and idle reaping.
//!
//! A builder is a cluster task bound to one queue. It runs one job at a time
//! and picks up the next job of its own label when it becomes idle; it is
//! never reused across labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, BuilderId, FrameworkId, JobId, TaskId};
use crate::master::{Offer, OfferResponse, OfferScope, TaskSpec};
use crate::resources::{image_runs_on, ResourceVector, SimTime, TaskRecord, TaskState};

pub const DEFAULT_IDLE_TIMEOUT: SimTime = 300_000;
pub const DEFAULT_FRAMEWORK: &str = "jenkins";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("no queue is labeled {0:?}")]
    UnknownLabel(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} was submitted twice")]
    DuplicateJob(JobId),
    #[error("invalid queue {label:?}: {reason}")]
    InvalidQueue { label: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Release,
    Ib,
    PrTest,
}

impl JobKind {
    pub const ALL: [JobKind; 3] = [JobKind::Release, JobKind::Ib, JobKind::PrTest];

    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Release => "release",
            JobKind::Ib => "ib",
            JobKind::PrTest => "pr-test",
        }
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQueue", into = "RawQueue")]
pub struct QueueConfig {
    pub label: String,
    /// Resources of one builder.
    pub request: ResourceVector,
    pub container_image: Option<String>,
    pub max_builders: u32,
    pub idle_timeout: SimTime,
    pub priority_weight: u32,
    /// Name of the build framework instance serving this queue.
    pub framework: String,
}

impl QueueConfig {
    pub fn new(label: &str, cpus: f64, mem: f64, max_builders: u32) -> Result<Self, BuildError> {
        let request =
            ResourceVector::from_f64(cpus, mem).map_err(|e| BuildError::InvalidQueue {
                label: label.to_owned(),
                reason: e.to_string(),
            })?;
        QueueConfig {
            label: label.to_owned(),
            request,
            container_image: None,
            max_builders,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            priority_weight: 1,
            framework: DEFAULT_FRAMEWORK.to_owned(),
        }
        .validated()
    }

    pub fn with_image(mut self, image: &str) -> Self {
        self.container_image = Some(image.to_owned());
        self
    }

    pub fn with_weight(mut self, weight: u32) -> Self {
        self.priority_weight = weight;
        self
    }

    pub fn with_idle_timeout(mut self, timeout: SimTime) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn with_framework(mut self, framework: &str) -> Self {
        self.framework = framework.to_owned();
        self
    }

    fn validated(self) -> Result<Self, BuildError> {
        let fail = |reason: &str| {
            Err(BuildError::InvalidQueue {
                label: self.label.clone(),
                reason: reason.to_owned(),
            })
        };
        if self.label.is_empty() {
            return fail("label is empty");
        }
        if self.request.cpus.is_zero() || self.request.mem.is_zero() {
            return fail("builders need positive cpus and mem");
        }
        if self.max_builders == 0 {
            return fail("maxBuilders must be at least 1");
        }
        if self.priority_weight == 0 {
            return fail("weight must be at least 1");
        }
        if self.container_image.as_deref() == Some("") {
            return fail("image is empty");
        }
        if self.framework.is_empty() {
            return fail("framework is empty");
        }
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawQueue {
    label: String,
    cpus: f64,
    mem: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    max_builders: u32,
    #[serde(default = "default_idle_timeout")]
    idle_timeout: SimTime,
    #[serde(default = "default_weight")]
    weight: u32,
    #[serde(default = "default_framework")]
    framework: String,
}

fn default_idle_timeout() -> SimTime {
    DEFAULT_IDLE_TIMEOUT
}

fn default_weight() -> u32 {
    1
}

fn default_framework() -> String {
    DEFAULT_FRAMEWORK.to_owned()
}

impl TryFrom<RawQueue> for QueueConfig {
    type Error = BuildError;

    fn try_from(raw: RawQueue) -> Result<Self, Self::Error> {
        let mut q = QueueConfig::new(&raw.label, raw.cpus, raw.mem, raw.max_builders)?;
        q.container_image = raw.image;
        q.idle_timeout = raw.idle_timeout;
        q.priority_weight = raw.weight;
        q.framework = raw.framework;
        q.validated()
    }
}

impl From<QueueConfig> for RawQueue {
    fn from(q: QueueConfig) -> Self {
        RawQueue {
            label: q.label,
            cpus: q.request.cpus.as_f64(),
            mem: q.request.mem.as_f64(),
            image: q.container_image,
            max_builders: q.max_builders,
            idle_timeout: q.idle_timeout,
            weight: q.priority_weight,
            framework: q.framework,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildJob {
    pub job_id: JobId,
    pub label: String,
    pub kind: JobKind,
    /// Work content.
    pub duration: SimTime,
    pub submitted_at: SimTime,
    /// First start; a requeued job keeps it.
    pub started_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
    /// Number of times the job has been handed to a builder.
    pub attempts: u32,
}

impl BuildJob {
    pub fn new(job_id: JobId, label: &str, kind: JobKind, duration: SimTime, now: SimTime) -> Self {
        BuildJob {
            job_id,
            label: label.to_owned(),
            kind,
            duration,
            submitted_at: now,
            started_at: None,
            finished_at: None,
            attempts: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuilderState {
    Provisioning,
    Idle,
    Busy,
    Reaped,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Builder {
    pub builder_id: BuilderId,
    pub label: String,
    pub task_id: TaskId,
    pub agent_id: AgentId,
    pub state: BuilderState,
    pub idle_since: SimTime,
    pub job: Option<JobId>,
}

/// A job handed to a builder. `attempt` lets the caller discard completion
/// events of attempts that were interrupted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub job_id: JobId,
    pub builder_id: BuilderId,
    pub attempt: u32,
    pub duration: SimTime,
}

#[derive(Clone, Debug)]
struct Queue {
    config: QueueConfig,
    /// Waiting jobs. Ids are issued in submit order, so the set order is FIFO
    /// and a requeued job slots back in ahead of later submissions.
    waiting: BTreeSet<JobId>,
}

#[derive(Clone, Debug)]
pub struct BuildFramework {
    id: FrameworkId,
    isolation: bool,
    queues: BTreeMap<String, Queue>,
    jobs: BTreeMap<JobId, BuildJob>,
    builders: BTreeMap<BuilderId, Builder>,
    by_task: BTreeMap<TaskId, BuilderId>,
    next_builder: u64,
}

impl BuildFramework {
    pub fn new(
        id: FrameworkId,
        queues: impl IntoIterator<Item = QueueConfig>,
        isolation: bool,
    ) -> Self {
        let queues = queues
            .into_iter()
            .map(|config| {
                (
                    config.label.clone(),
                    Queue {
                        config,
                        waiting: BTreeSet::new(),
                    },
                )
            })
            .collect();
        BuildFramework {
            id,
            isolation,
            queues,
            jobs: BTreeMap::new(),
            builders: BTreeMap::new(),
            by_task: BTreeMap::new(),
            next_builder: 1,
        }
    }

    pub fn id(&self) -> &FrameworkId {
        &self.id
    }

    pub fn serves(&self, label: &str) -> bool {
        self.queues.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.queues.keys().map(String::as_str)
    }

    pub fn queue_config(&self, label: &str) -> Option<&QueueConfig> {
        self.queues.get(label).map(|q| &q.config)
    }

    pub fn waiting(&self, label: &str) -> usize {
        self.queues.get(label).map_or(0, |q| q.waiting.len())
    }

    pub fn job(&self, id: JobId) -> Option<&BuildJob> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &BuildJob> {
        self.jobs.values()
    }

    pub fn builders(&self) -> impl Iterator<Item = &Builder> {
        self.builders.values()
    }

    /// Cluster tasks of builders that have not been reaped.
    pub fn live_tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.by_task.keys()
    }

    pub fn builder_of_task(&self, task: &TaskId) -> Option<&Builder> {
        self.by_task.get(task).and_then(|b| self.builders.get(b))
    }

    /// Non-reaped builders of a label.
    fn live_builders<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Builder> + 'a {
        self.builders
            .values()
            .filter(move |b| b.label == label && b.state != BuilderState::Reaped)
    }

    pub fn builder_count(&self, label: &str) -> usize {
        self.live_builders(label).count()
    }

    /// Resources currently held by the builders of a label.
    pub fn builder_resources(&self, label: &str) -> ResourceVector {
        match self.queues.get(label) {
            Some(q) => q.config.request.scaled(self.builder_count(label) as u64),
            None => ResourceVector::ZERO,
        }
    }

    /// Oldest busy builder of a label, as a failure-injection target.
    pub fn busy_builder<'a>(&'a self, label: &'a str) -> Option<&'a Builder> {
        self.live_builders(label)
            .find(|b| b.state == BuilderState::Busy)
    }

    /// Waiting jobs not yet covered by an idle or provisioning builder.
    pub fn demand(&self, label: &str) -> usize {
        let covered = self
            .live_builders(label)
            .filter(|b| matches!(b.state, BuilderState::Idle | BuilderState::Provisioning))
            .count();
        self.waiting(label).saturating_sub(covered)
    }

    fn in_scope(scope: &OfferScope, label: &str) -> bool {
        match scope {
            OfferScope::Any => true,
            OfferScope::Services => false,
            OfferScope::Queue(l) => l == label,
        }
    }

    fn has_headroom(&self, q: &Queue) -> bool {
        self.builder_count(&q.config.label) < q.config.max_builders as usize
    }

    pub fn wants_offers(&self, scope: &OfferScope) -> bool {
        self.queues.values().any(|q| {
            Self::in_scope(scope, &q.config.label)
                && self.demand(&q.config.label) > 0
                && self.has_headroom(q)
        })
    }

    // ---- jobs --------------------------------------------------------

    pub fn submit(&mut self, job: BuildJob) -> Result<(), BuildError> {
        let queue = self
            .queues
            .get_mut(&job.label)
            .ok_or_else(|| BuildError::UnknownLabel(job.label.clone()))?;
        if self.jobs.contains_key(&job.job_id) {
            return Err(BuildError::DuplicateJob(job.job_id));
        }
        queue.waiting.insert(job.job_id);
        self.jobs.insert(job.job_id, job);
        Ok(())
    }

    /// Hands the head of each queue to that queue's idle builders, oldest
    /// builder first.
    pub fn assign(&mut self, now: SimTime) -> Vec<Assignment> {
        let mut out = Vec::new();
        for queue in self.queues.values_mut() {
            if queue.waiting.is_empty() {
                continue;
            }
            let idle = self
                .builders
                .values_mut()
                .filter(|b| b.label == queue.config.label && b.state == BuilderState::Idle);
            for builder in idle {
                let Some(job_id) = queue.waiting.pop_first() else {
                    break;
                };
                let job = self
                    .jobs
                    .get_mut(&job_id)
                    .expect("waiting jobs are registered");
                job.started_at.get_or_insert(now);
                job.attempts += 1;
                builder.state = BuilderState::Busy;
                builder.job = Some(job_id);
                out.push(Assignment {
                    job_id,
                    builder_id: builder.builder_id.clone(),
                    attempt: job.attempts,
                    duration: job.duration,
                });
            }
        }
        out
    }

    /// Completes an attempt and returns the builder that ran it, or `None`
    /// for a stale attempt, in which case nothing changes.
    pub fn finish_job(
        &mut self,
        job_id: JobId,
        attempt: u32,
        now: SimTime,
    ) -> Result<Option<BuilderId>, BuildError> {
        let job = self
            .jobs
            .get_mut(&job_id)
            .ok_or(BuildError::UnknownJob(job_id))?;
        if job.attempts != attempt || job.finished_at.is_some() {
            return Ok(None);
        }
        let Some(builder) = self
            .builders
            .values_mut()
            .find(|b| b.state == BuilderState::Busy && b.job == Some(job_id))
        else {
            return Ok(None);
        };
        job.finished_at = Some(now);
        builder.state = BuilderState::Idle;
        builder.job = None;
        builder.idle_since = now;
        Ok(Some(builder.builder_id.clone()))
    }

    // ---- offers ------------------------------------------------------

    /// Launches builders for the queue with the largest weighted backlog that
    /// still has uncovered demand, headroom under its cap and a builder shape
    /// that fits the offer.
    pub fn on_offer(&mut self, offer: &Offer, now: SimTime) -> OfferResponse {
        let host = offer.host();
        let mut best: Option<(u64, &Queue)> = None;
        for q in self.queues.values() {
            let label = &q.config.label;
            if !Self::in_scope(&offer.scope, label)
                || self.demand(label) == 0
                || !self.has_headroom(q)
                || !offer.resources.contains(&q.config.request)
                || !image_runs_on(q.config.container_image.as_deref(), &host, self.isolation)
            {
                continue;
            }
            let score = q.config.priority_weight as u64 * q.waiting.len() as u64;
            // Labels iterate in order, so ties go to the earlier label.
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, q));
            }
        }
        let Some((_, queue)) = best else {
            return OfferResponse::Decline;
        };
        let config = queue.config.clone();
        let headroom = config.max_builders as usize - self.builder_count(&config.label);
        let n = (offer.resources.fit_count(&config.request) as usize)
            .min(self.demand(&config.label))
            .min(headroom);

        let mut specs = Vec::with_capacity(n);
        for _ in 0..n {
            let builder_id = BuilderId::new(format!("{}.b{}", config.label, self.next_builder));
            self.next_builder += 1;
            let task_id = TaskId::new(builder_id.as_str());
            self.by_task.insert(task_id.clone(), builder_id.clone());
            self.builders.insert(
                builder_id.clone(),
                Builder {
                    builder_id,
                    label: config.label.clone(),
                    task_id: task_id.clone(),
                    agent_id: offer.agent_id.clone(),
                    state: BuilderState::Provisioning,
                    idle_since: now,
                    job: None,
                },
            );
            specs.push(TaskSpec {
                task_id,
                request: config.request,
                container_image: config.container_image.clone(),
                payload: config.label.clone(),
            });
        }
        OfferResponse::Accept(specs)
    }

    /// Drops builders whose launch the master refused.
    pub fn forget_launches(&mut self, tasks: &[TaskId]) {
        for task in tasks {
            if let Some(b) = self.by_task.remove(task) {
                self.builders.remove(&b);
            }
        }
    }

    /// Status update for a builder task. A builder that dies mid-job puts
    /// the job back in its queue, ahead of later submissions; the requeued
    /// job id is returned.
    pub fn on_task_update(&mut self, task: &TaskRecord, now: SimTime) -> Option<JobId> {
        let builder_id = self.by_task.get(&task.task_id)?;
        let builder = self.builders.get_mut(builder_id)?;
        if task.state == TaskState::Running {
            if builder.state == BuilderState::Provisioning {
                builder.state = BuilderState::Idle;
                builder.idle_since = now;
            }
            return None;
        }
        if !task.state.is_terminal() {
            return None;
        }
        builder.state = BuilderState::Reaped;
        let job = builder.job.take();
        self.by_task.remove(&task.task_id);
        let job_id = job?;
        let label = self.jobs.get(&job_id)?.label.clone();
        self.queues.get_mut(&label)?.waiting.insert(job_id);
        Some(job_id)
    }

    /// Reaps idle builders that reached their queue's idle timeout. Returns
    /// the cluster tasks the caller must kill.
    pub fn reap_idle(&mut self, now: SimTime) -> Vec<(BuilderId, TaskId)> {
        let mut reaped = Vec::new();
        for builder in self.builders.values_mut() {
            if builder.state != BuilderState::Idle {
                continue;
            }
            let timeout = self.queues[&builder.label].config.idle_timeout;
            if now.saturating_sub(builder.idle_since) >= timeout {
                builder.state = BuilderState::Reaped;
                self.by_task.remove(&builder.task_id);
                reaped.push((builder.builder_id.clone(), builder.task_id.clone()));
            }
        }
        reaped
    }

    /// Drops reaped builders from memory.
    pub fn prune(&mut self) {
        self.builders.retain(|_, b| b.state != BuilderState::Reaped);
    }

    /// Work conservation, FIFO bookkeeping and builder caps.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut placed: BTreeMap<JobId, &str> = BTreeMap::new();
        for q in self.queues.values() {
            let label = &q.config.label;
            if !q.waiting.is_empty()
                && self
                    .live_builders(label)
                    .any(|b| b.state == BuilderState::Idle)
            {
                return Err(format!(
                    "queue {label} has waiting jobs and an idle builder"
                ));
            }
            let live = self.builder_count(label);
            if live > q.config.max_builders as usize {
                return Err(format!("queue {label} has {live} builders over its cap"));
            }
            for id in &q.waiting {
                placed.insert(*id, "waiting");
            }
        }
        for b in self.builders.values() {
            match (b.state, b.job) {
                (BuilderState::Busy, Some(job)) => {
                    let j = self
                        .jobs
                        .get(&job)
                        .ok_or(format!("{} runs unknown {job}", b.builder_id))?;
                    if j.label != b.label || j.finished_at.is_some() {
                        return Err(format!("{} holds {job} which it cannot run", b.builder_id));
                    }
                    if placed.insert(job, "running").is_some() {
                        return Err(format!("{job} is both waiting and running"));
                    }
                }
                (BuilderState::Busy, None) => {
                    return Err(format!("busy builder {} holds no job", b.builder_id))
                }
                (_, Some(job)) => {
                    return Err(format!(
                        "builder {} holds {job} while not busy",
                        b.builder_id
                    ))
                }
                _ => {}
            }
        }
        for job in self.jobs.values() {
            let accounted = placed.contains_key(&job.job_id) || job.finished_at.is_some();
            if !accounted {
                return Err(format!(
                    "{} is neither waiting, running nor finished",
                    job.job_id
                ));
            }
            if let Some(started) = job.started_at {
                if started < job.submitted_at {
                    return Err(format!("{} started before it was submitted", job.job_id));
                }
            }
        }
        Ok(())
    }
}
