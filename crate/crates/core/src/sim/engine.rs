//! The discrete-event loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::build::{BuildFramework, BuildJob, JobKind};
use crate::discovery::ProxyCron;
use crate::ids::{AgentId, FrameworkId, JobId, MasterId, OfferId, TaskId};
use crate::master::{Master, MasterError, Offer, OfferResponse, OfferScope};
use crate::resources::{ResourceVector, SimTime, TaskEvent, TaskRecord, TaskState};
use crate::service::ServiceFramework;

use super::event::{Event, EventLog};
use super::metrics::{Integrals, LatencyStats, MetricsReport, OfferCounts};
use super::policy::static_policy_round;
use super::scenario::{FailureKind, OperationKind, Policy, Pool, PoolBinding, Scenario};
use super::workload::{generate, Arrival};
use super::{SimError, SimOutput, SERVICE_FRAMEWORK};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Tick,
    Fault(usize),
    Operation(usize),
    Arrival(usize),
    Deliver(OfferId),
    Launch(TaskId),
    JobDone {
        framework: usize,
        job: JobId,
        attempt: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    /// How many equal-time hops led here.
    depth: u8,
    what: Pending,
}

struct Engine<'s> {
    sc: &'s Scenario,
    seed: u64,
    master: Master,
    services: ServiceFramework,
    builds: Vec<BuildFramework>,
    label_owner: BTreeMap<String, usize>,
    pools: Vec<Pool>,
    cron: ProxyCron,
    arrivals: Vec<Arrival>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    next_job: u64,
    now: SimTime,
    depth: u8,
    processed: usize,
    verify: bool,
    log: EventLog,
    integrals: Integrals,
    offers: OfferCounts,
    elections: u64,
}

type Step = Result<(), SimError>;

pub(super) fn run(scenario: &Scenario, seed: u64, verify: bool) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, seed, verify)?;
    engine.start()?;
    engine.drive()?;
    Ok(engine.finish())
}

impl<'s> Engine<'s> {
    fn new(sc: &'s Scenario, seed: u64, verify: bool) -> Result<Self, SimError> {
        let mut master = Master::new(sc.master_group()?, sc.offer_ttl);
        for agent in &sc.agents {
            master.register_agent(agent.clone()).map_err(internal(0))?;
        }
        let service_id = FrameworkId::new(SERVICE_FRAMEWORK);
        master.register_framework(service_id.clone(), SERVICE_FRAMEWORK);
        let mut builds = Vec::new();
        let mut label_owner = BTreeMap::new();
        for name in sc.build_frameworks() {
            let queues: Vec<_> = sc
                .queues
                .iter()
                .filter(|q| q.framework == name)
                .cloned()
                .collect();
            for q in &queues {
                label_owner.insert(q.label.clone(), builds.len());
            }
            master.register_framework(FrameworkId::new(name), name);
            builds.push(BuildFramework::new(
                FrameworkId::new(name),
                queues,
                sc.container_isolation,
            ));
        }
        let mut pools = match sc.policy {
            Policy::Static => sc.static_map.clone().unwrap_or_default(),
            Policy::Dynamic => Vec::new(),
        };
        for pool in &mut pools {
            pool.agents.sort();
        }
        Ok(Engine {
            sc,
            seed,
            master,
            services: ServiceFramework::new(service_id, sc.container_isolation),
            builds,
            label_owner,
            pools,
            cron: ProxyCron::new(sc.cron_period),
            arrivals: generate(sc, seed),
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_job: 1,
            now: 0,
            depth: 0,
            processed: 0,
            verify,
            log: EventLog::new(),
            integrals: Integrals::default(),
            offers: OfferCounts::default(),
            elections: 0,
        })
    }

    fn emit(&mut self, event: Event) {
        match &event {
            Event::OfferIssued { .. } => self.offers.issued += 1,
            Event::OfferAccepted { .. } => self.offers.accepted += 1,
            Event::OfferDeclined { .. } => self.offers.declined += 1,
            Event::OfferExpired { .. } => self.offers.expired += 1,
            Event::OfferRescinded { .. } => self.offers.rescinded += 1,
            Event::OfferRejected { .. } => self.offers.rejected += 1,
            Event::LeaderElected { .. } => self.elections += 1,
            _ => {}
        }
        self.log.push(self.now, event);
    }

    /// Schedules a follow-up of the event being processed.
    fn schedule(&mut self, at: SimTime, what: Pending) {
        let depth = if at == self.now { self.depth + 1 } else { 0 };
        self.push(at, depth, what);
    }

    fn push(&mut self, at: SimTime, depth: u8, what: Pending) {
        self.queue.push(Reverse(Scheduled {
            at,
            seq: self.next_seq,
            depth,
            what,
        }));
        self.next_seq += 1;
    }

    fn start(&mut self) -> Step {
        let sc = self.sc;
        self.emit(Event::SimStarted {
            name: sc.name.clone(),
            seed: self.seed,
            policy: sc.policy,
            duration: sc.duration,
        });
        for agent in &sc.agents {
            self.emit(Event::AgentRegistered {
                agent: agent.agent_id.clone(),
                total: agent.total,
            });
        }
        for app in &sc.apps {
            let change = self.services.deploy(app.clone(), 0);
            self.emit(Event::AppDeployed {
                app: change.app_id,
                version: change.version,
                instances: app.instances,
            });
        }
        for i in 0..sc.failures.len() {
            self.push(sc.failures[i].at, 0, Pending::Fault(i));
        }
        for i in 0..sc.operations.len() {
            self.push(sc.operations[i].at, 0, Pending::Operation(i));
        }
        for i in 0..self.arrivals.len() {
            self.push(self.arrivals[i].at, 0, Pending::Arrival(i));
        }
        self.push(0, 0, Pending::Tick);
        self.after_event()
    }

    fn drive(&mut self) -> Step {
        while let Some(Reverse(next)) = self.queue.pop() {
            if next.at > self.sc.duration {
                break;
            }
            if next.depth > 1 {
                return Err(SimError::ZeroDelayCycle { at: next.at });
            }
            self.advance(next.at);
            self.depth = next.depth;
            match next.what {
                Pending::Tick => self.tick()?,
                Pending::Fault(i) => self.fault(i)?,
                Pending::Operation(i) => self.operation(i)?,
                Pending::Arrival(i) => self.arrival(i)?,
                Pending::Deliver(offer) => self.deliver(offer)?,
                Pending::Launch(task) => self.launch(&task)?,
                Pending::JobDone {
                    framework,
                    job,
                    attempt,
                } => self.job_done(framework, job, attempt)?,
            }
            self.processed += 1;
            self.after_event()?;
        }
        Ok(())
    }

    /// Integrates allocation and capacity up to `to`.
    fn advance(&mut self, to: SimTime) {
        if to > self.now {
            let (allocated, alive) = self.master.agents().filter(|a| a.alive).fold(
                (ResourceVector::ZERO, ResourceVector::ZERO),
                |(al, tot), a| (al + a.allocated, tot + a.spec.total),
            );
            self.integrals.accumulate(to - self.now, &allocated, &alive);
            self.now = to;
        }
    }

    fn finish(mut self) -> SimOutput {
        self.advance(self.sc.duration);
        self.emit(Event::SimEnded {});

        let mut submitted: BTreeMap<JobKind, u64> = BTreeMap::new();
        let mut samples: BTreeMap<JobKind, Vec<SimTime>> = BTreeMap::new();
        let mut builds_completed = 0;
        for job in self.builds.iter().flat_map(|b| b.jobs()) {
            *submitted.entry(job.kind).or_default() += 1;
            if let Some(started) = job.started_at {
                samples
                    .entry(job.kind)
                    .or_default()
                    .push(started - job.submitted_at);
            }
            builds_completed += job.finished_at.is_some() as u64;
        }
        let report = MetricsReport {
            duration: self.sc.duration,
            integrals: self.integrals,
            cpu_util: self.integrals.cpu_util(),
            mem_util: self.integrals.mem_util(),
            submitted,
            latency: samples
                .into_iter()
                .filter_map(|(k, v)| LatencyStats::from_samples(v).map(|l| (k, l)))
                .collect(),
            builds_completed,
            offers: self.offers,
            failovers: self.elections.saturating_sub(1),
        };
        SimOutput {
            log: self.log,
            report,
        }
    }

    // ---- ticks ---------------------------------------------------------

    fn tick(&mut self) -> Step {
        let now = self.now;
        if let Some(cfg) = self.cron.tick(now, &self.services) {
            let backends = self.services.endpoints().len();
            self.emit(Event::ProxyPublished {
                rendered_at: cfg.rendered_at,
                backends,
                text: cfg.text,
            });
        }

        if self.master.group().has_quorum() {
            if let Some(failover) = self.master.ensure_leader().map_err(internal(now))? {
                let epoch = self.master.group().epoch();
                self.emit(Event::LeaderElected {
                    leader: failover.leader,
                    epoch,
                });
                for offer in failover.rescinded {
                    self.emit(Event::OfferRescinded {
                        offer: offer.offer_id,
                        reason: "failover".into(),
                    });
                }
            }
            for offer in self.master.expire_offers(now).map_err(internal(now))? {
                self.emit(Event::OfferExpired {
                    offer: offer.offer_id,
                });
            }
        }

        for i in 0..self.builds.len() {
            let reaped = self.builds[i].reap_idle(now);
            for (builder, task) in reaped {
                self.emit(Event::BuilderReaped { builder });
                self.end_task(&task, TaskEvent::Kill)?;
            }
            self.builds[i].prune();
        }

        for task in self.services.health_checks(now) {
            self.emit(Event::InstanceUnhealthy { task: task.clone() });
            self.end_task(&task, TaskEvent::Kill)?;
        }

        if self.master.group().has_quorum() && self.master.group().leader().is_some() {
            let offers = self.issue_offers()?;
            for offer in &offers {
                self.emit(Event::OfferIssued {
                    offer: offer.offer_id,
                    agent: offer.agent_id.clone(),
                    framework: offer.framework_id.clone(),
                    resources: offer.resources,
                    scope: offer.scope.clone(),
                });
            }
            for offer in offers {
                if self.sc.framework_latency == 0 {
                    self.deliver(offer.offer_id)?;
                } else {
                    self.schedule(
                        now + self.sc.framework_latency,
                        Pending::Deliver(offer.offer_id),
                    );
                }
            }
        }

        self.schedule(now + self.sc.round_interval, Pending::Tick);
        Ok(())
    }

    fn issue_offers(&mut self) -> Result<Vec<Offer>, SimError> {
        let now = self.now;
        let services = &self.services;
        let builds = &self.builds;
        let interest = |f: &FrameworkId, scope: &OfferScope| {
            if f == services.id() {
                services.wants_offers(scope)
            } else {
                builds
                    .iter()
                    .find(|b| b.id() == f)
                    .is_some_and(|b| b.wants_offers(scope))
            }
        };
        let result = match self.sc.policy {
            Policy::Dynamic => self.master.allocation_round(now, &interest),
            Policy::Static => {
                let label_owner = &self.label_owner;
                let owner = |binding: &PoolBinding| match binding {
                    PoolBinding::Services => Some(services.id().clone()),
                    PoolBinding::Queue(label) => {
                        label_owner.get(label).map(|&i| builds[i].id().clone())
                    }
                };
                static_policy_round(&mut self.master, &self.pools, &owner, &interest, now)
            }
        };
        result.map_err(internal(now))
    }

    // ---- offers and tasks ----------------------------------------------

    fn deliver(&mut self, offer_id: OfferId) -> Step {
        let now = self.now;
        // Rescinded and expired offers never reach the framework; without a
        // leader nothing is forwarded and the offer waits for the next one.
        let Some(offer) = self.master.offer(offer_id).cloned() else {
            return Ok(());
        };
        if self.master.group().leader().is_none() || offer.expires_at <= now {
            return Ok(());
        }
        let framework = offer.framework_id.clone();
        let response = if &framework == self.services.id() {
            self.services.on_offer(&offer, now)
        } else {
            match self.builds.iter_mut().find(|b| b.id() == &framework) {
                Some(b) => b.on_offer(&offer, now),
                None => OfferResponse::Decline,
            }
        };
        let proposed: Vec<TaskId> = match &response {
            OfferResponse::Accept(specs) => specs.iter().map(|s| s.task_id.clone()).collect(),
            OfferResponse::Decline => Vec::new(),
        };
        match self.master.handle_response(offer_id, response, now) {
            Ok(records) if records.is_empty() => {
                self.emit(Event::OfferDeclined {
                    offer: offer_id,
                    framework,
                });
            }
            Ok(records) => {
                self.emit(Event::OfferAccepted {
                    offer: offer_id,
                    framework: framework.clone(),
                    tasks: records.len(),
                });
                for r in records {
                    let ports = self
                        .services
                        .instance(&r.task_id)
                        .map(|i| i.ports.iter().map(|&(_, host)| host).collect())
                        .unwrap_or_default();
                    self.emit(Event::TaskStaging {
                        task: r.task_id.clone(),
                        framework: r.framework_id.clone(),
                        agent: r.agent_id.clone(),
                        resources: r.request,
                        image: r.container_image.clone(),
                        ports,
                    });
                    self.schedule(now + self.sc.launch_delay, Pending::Launch(r.task_id));
                }
            }
            Err(e @ (MasterError::OverCommit { .. } | MasterError::DuplicateTask(_))) => {
                self.emit(Event::OfferRejected {
                    offer: offer_id,
                    reason: e.to_string(),
                });
                if &framework == self.services.id() {
                    self.services.forget_launches(&proposed);
                } else if let Some(b) = self.builds.iter_mut().find(|b| b.id() == &framework) {
                    b.forget_launches(&proposed);
                }
            }
            Err(e) => return Err(internal(now)(e)),
        }
        Ok(())
    }

    fn launch(&mut self, task: &TaskId) -> Step {
        let staging = self
            .master
            .task(task)
            .is_some_and(|t| t.state == TaskState::Staging);
        if !staging {
            return Ok(());
        }
        let record = self
            .master
            .task_transition(task, TaskEvent::Launched, self.now)
            .map_err(internal(self.now))?;
        self.emit(Event::TaskUpdate {
            task: task.clone(),
            state: record.state,
        });
        self.notify(&record);
        Ok(())
    }

    /// Drives a live task to a terminal state and tells its framework.
    fn end_task(&mut self, task: &TaskId, event: TaskEvent) -> Step {
        let live = self
            .master
            .task(task)
            .is_some_and(|t| !t.state.is_terminal());
        if !live {
            return Ok(());
        }
        let record = self
            .master
            .task_transition(task, event, self.now)
            .map_err(internal(self.now))?;
        self.emit(Event::TaskUpdate {
            task: task.clone(),
            state: record.state,
        });
        self.notify(&record);
        Ok(())
    }

    fn notify(&mut self, record: &TaskRecord) {
        if &record.framework_id == self.services.id() {
            self.services.on_task_update(record);
            if record.state.is_terminal() {
                self.revive(record.framework_id.clone());
            }
            return;
        }
        let now = self.now;
        let requeued = self
            .builds
            .iter_mut()
            .find(|b| b.id() == &record.framework_id)
            .and_then(|b| b.on_task_update(record, now));
        if let Some(job) = requeued {
            self.emit(Event::JobRequeued { job });
            self.revive(record.framework_id.clone());
        }
    }

    /// New work lifts the framework's decline back-off.
    fn revive(&mut self, framework: FrameworkId) {
        let filters = self.master.revive(&framework);
        if filters > 0 {
            self.emit(Event::OffersRevived { framework, filters });
        }
    }

    // ---- jobs ----------------------------------------------------------

    fn arrival(&mut self, i: usize) -> Step {
        let a = &self.arrivals[i];
        let job = BuildJob::new(JobId(self.next_job), &a.label, a.kind, a.duration, self.now);
        self.next_job += 1;
        let owner = self.label_owner[&a.label];
        let event = Event::JobSubmitted {
            job: job.job_id,
            kind: job.kind,
            label: job.label.clone(),
        };
        self.builds[owner]
            .submit(job)
            .map_err(|e| SimError::Internal {
                at: self.now,
                reason: e.to_string(),
            })?;
        self.emit(event);
        let framework = self.builds[owner].id().clone();
        self.revive(framework);
        Ok(())
    }

    fn job_done(&mut self, framework: usize, job: JobId, attempt: u32) -> Step {
        let done = self.builds[framework]
            .finish_job(job, attempt, self.now)
            .map_err(|e| SimError::Internal {
                at: self.now,
                reason: e.to_string(),
            })?;
        if let Some(builder) = done {
            self.emit(Event::JobFinished { job, builder });
        }
        Ok(())
    }

    /// Work conservation: idle builders pick up waiting jobs right away.
    fn after_event(&mut self) -> Step {
        for i in 0..self.builds.len() {
            for a in self.builds[i].assign(self.now) {
                self.emit(Event::JobStarted {
                    job: a.job_id,
                    builder: a.builder_id,
                    attempt: a.attempt,
                });
                self.schedule(
                    self.now + a.duration,
                    Pending::JobDone {
                        framework: i,
                        job: a.job_id,
                        attempt: a.attempt,
                    },
                );
            }
        }
        if self.verify {
            self.check()
                .map_err(|reason| SimError::InvariantViolation {
                    index: self.processed,
                    at: self.now,
                    reason,
                })?;
        }
        Ok(())
    }

    // ---- failures and operations -----------------------------------------

    fn skip(&mut self, target: &str, reason: impl Into<String>) {
        self.emit(Event::ActionSkipped {
            target: target.to_owned(),
            reason: reason.into(),
        });
    }

    fn fault(&mut self, i: usize) -> Step {
        let f = &self.sc.failures[i];
        let now = self.now;
        match f.kind {
            FailureKind::AgentCrash => {
                let agent = AgentId::new(f.target.as_str());
                if !self.master.agent(&agent).is_some_and(|a| a.alive) {
                    self.skip(&f.target, "agent already down");
                    return Ok(());
                }
                let loss = self
                    .master
                    .crash_agent(&agent, now)
                    .map_err(internal(now))?;
                self.emit(Event::AgentCrashed { agent });
                for offer in loss.rescinded {
                    self.emit(Event::OfferRescinded {
                        offer: offer.offer_id,
                        reason: "agent-lost".into(),
                    });
                }
                for record in loss.lost {
                    self.emit(Event::TaskUpdate {
                        task: record.task_id.clone(),
                        state: record.state,
                    });
                    self.notify(&record);
                }
            }
            FailureKind::AgentRecover => {
                let agent = AgentId::new(f.target.as_str());
                if self.master.agent(&agent).is_some_and(|a| a.alive) {
                    self.skip(&f.target, "agent already up");
                    return Ok(());
                }
                self.master.recover_agent(&agent).map_err(internal(now))?;
                self.emit(Event::AgentRecovered { agent });
            }
            FailureKind::MasterCrash | FailureKind::MasterRecover => {
                let id = MasterId::new(f.target.as_str());
                let alive = self
                    .master
                    .group()
                    .masters()
                    .iter()
                    .any(|m| m.id == id && m.alive);
                let crash = f.kind == FailureKind::MasterCrash;
                if alive != crash {
                    self.skip(
                        &f.target,
                        if crash {
                            "master already down"
                        } else {
                            "master already up"
                        },
                    );
                    return Ok(());
                }
                if crash {
                    let had_quorum = self.master.group().has_quorum();
                    let leader_lost = self.master.crash_master(&id).map_err(internal(now))?;
                    self.emit(Event::MasterCrashed {
                        master: id,
                        leader_lost,
                    });
                    if had_quorum && !self.master.group().has_quorum() {
                        let alive = self.master.group().alive_count();
                        self.emit(Event::QuorumLost { alive });
                    }
                } else {
                    self.master.recover_master(&id).map_err(internal(now))?;
                    self.emit(Event::MasterRecovered { master: id });
                }
            }
            FailureKind::TaskFail => return self.task_fail(i),
        }
        Ok(())
    }

    fn task_fail(&mut self, i: usize) -> Step {
        let target = self.sc.failures[i].target.clone();
        if let Some(&owner) = self.label_owner.get(&target) {
            let Some(task) = self.builds[owner]
                .busy_builder(&target)
                .map(|b| b.task_id.clone())
            else {
                self.skip(&target, "no busy builder");
                return Ok(());
            };
            return self.end_task(&task, TaskEvent::Failed);
        }
        let app = crate::ids::AppId::new(target.as_str());
        let Some(task) = self.services.pick_instance(&app) else {
            self.skip(&target, "no running instance");
            return Ok(());
        };
        if self.services.has_health_check(&app) {
            // The instance stops answering; health checks notice it.
            self.services.mark_hung(&task);
            self.emit(Event::InstanceHung { task });
            Ok(())
        } else {
            self.end_task(&task, TaskEvent::Failed)
        }
    }

    fn operation(&mut self, i: usize) -> Step {
        let now = self.now;
        let op = &self.sc.operations[i];
        let change = match &op.kind {
            OperationKind::Deploy { app } => Ok(self.services.deploy(app.clone(), now)),
            OperationKind::Scale { app, instances } => self.services.scale(app, *instances, now),
            OperationKind::Rollback { app, version } => self.services.rollback(app, *version, now),
        };
        let change = match change {
            Ok(c) => c,
            Err(e) => {
                let target = match &op.kind {
                    OperationKind::Deploy { app } => app.app_id.to_string(),
                    OperationKind::Scale { app, .. } | OperationKind::Rollback { app, .. } => {
                        app.to_string()
                    }
                };
                self.skip(&target, e.to_string());
                return Ok(());
            }
        };
        let instances = self
            .services
            .app(&change.app_id)
            .map_or(0, |a| a.definition.instances);
        self.emit(Event::AppDeployed {
            app: change.app_id,
            version: change.version,
            instances,
        });
        for task in change.kills {
            self.end_task(&task, TaskEvent::Kill)?;
        }
        self.revive(self.services.id().clone());
        Ok(())
    }

    // ---- verification ----------------------------------------------------

    fn check(&self) -> Result<(), String> {
        self.master.check_invariants()?;
        self.services.check_invariants()?;
        for b in &self.builds {
            b.check_invariants()
                .map_err(|e| format!("{}: {e}", b.id()))?;
        }
        // Every live cluster task belongs to exactly one live framework
        // instance or builder, and vice versa.
        let mut by_framework: BTreeMap<&FrameworkId, BTreeSet<&TaskId>> = BTreeMap::new();
        for t in self.master.tasks().filter(|t| !t.state.is_terminal()) {
            by_framework
                .entry(&t.framework_id)
                .or_default()
                .insert(&t.task_id);
        }
        let empty = BTreeSet::new();
        let svc: BTreeSet<&TaskId> = self.services.live_tasks().collect();
        if by_framework.get(self.services.id()).unwrap_or(&empty) != &svc {
            return Err("service instances and cluster tasks disagree".into());
        }
        for b in &self.builds {
            let mine: BTreeSet<&TaskId> = b.live_tasks().collect();
            if by_framework.get(b.id()).unwrap_or(&empty) != &mine {
                return Err(format!("{}: builders and cluster tasks disagree", b.id()));
            }
        }
        Ok(())
    }
}

fn internal(at: SimTime) -> impl Fn(MasterError) -> SimError {
    move |e| SimError::Internal {
        at,
        reason: e.to_string(),
    }
}
