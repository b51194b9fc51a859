//! The two-level scheduler core.
//!
//! The master turns free agent capacity into resource offers, hands each offer
//! to one framework chosen by dominant-resource fairness, applies the
//! framework's accept/decline response and tracks the resulting tasks through
//! their lifecycle. All mutation happens through `&mut self` from a single
//! event loop.

mod fairness;
mod ha;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, FrameworkId, MasterId, OfferId, TaskId};
use crate::resources::{
    AgentSpec, AgentState, AttributeSet, Host, IllegalTransition, ResourceError, ResourceVector,
    SimTime, TaskEvent, TaskRecord, TaskState,
};

pub use fairness::{dominant_share, sort_frameworks_fair, Share};
pub use ha::{MasterGroup, MasterInfo, GROUP_SIZE, QUORUM};

pub const DEFAULT_OFFER_TTL: SimTime = 30_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MasterError {
    #[error("no quorum: fewer than {QUORUM} of {GROUP_SIZE} masters alive")]
    NoQuorum,
    #[error("no elected leader")]
    NoLeader,
    #[error("master group needs exactly {GROUP_SIZE} distinct masters, got {0}")]
    GroupSize(usize),
    #[error("unknown master {0}")]
    UnknownMaster(MasterId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} registered twice")]
    DuplicateAgent(AgentId),
    #[error("agent {0} is not alive")]
    AgentDead(AgentId),
    #[error("agent {0} has nothing left to offer")]
    NothingToOffer(AgentId),
    #[error("unknown framework {0}")]
    UnknownFramework(FrameworkId),
    #[error("unknown or already answered offer {0}")]
    UnknownOffer(OfferId),
    #[error("offer {0} expired before the response arrived")]
    OfferExpired(OfferId),
    #[error("offer {offer}: accepted tasks need {requested} but the offer holds {offered}")]
    OverCommit {
        offer: OfferId,
        requested: ResourceVector,
        offered: ResourceVector,
    },
    #[error("task id {0} already in use")]
    DuplicateTask(TaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task}: {source}")]
    IllegalTransition {
        task: TaskId,
        #[source]
        source: IllegalTransition,
    },
    #[error(transparent)]
    Resource(#[from] ResourceError),
}

/// Which consumers an offer is restricted to. Dynamic allocation offers to
/// `Any`; the static-partition baseline binds each pool to services or to one
/// build queue.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OfferScope {
    Any,
    Services,
    Queue(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub offer_id: OfferId,
    pub agent_id: AgentId,
    pub framework_id: FrameworkId,
    pub resources: ResourceVector,
    pub attributes: AttributeSet,
    pub zone: String,
    pub scope: OfferScope,
    pub issued_at: SimTime,
    pub expires_at: SimTime,
}

impl Offer {
    pub fn host(&self) -> Host {
        Host {
            hostname: self.agent_id.clone(),
            zone: self.zone.clone(),
            attributes: self.attributes.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkHandle {
    pub framework_id: FrameworkId,
    pub name: String,
    /// Sum of the requests of this framework's non-terminal tasks.
    pub allocated: ResourceVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub request: ResourceVector,
    pub container_image: Option<String>,
    /// Opaque framework payload tag (app id, queue label, ...).
    pub payload: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OfferResponse {
    Decline,
    Accept(Vec<TaskSpec>),
}

/// Whether a framework currently wants offers of a given scope. Frameworks
/// without demand stay out of the allocation round entirely.
pub trait OfferInterest {
    fn wants(&self, framework: &FrameworkId, scope: &OfferScope) -> bool;
}

impl<F> OfferInterest for F
where
    F: Fn(&FrameworkId, &OfferScope) -> bool,
{
    fn wants(&self, framework: &FrameworkId, scope: &OfferScope) -> bool {
        self(framework, scope)
    }
}

/// Outcome of making sure a leader is in office.
#[derive(Clone, Debug, PartialEq)]
pub struct Failover {
    pub leader: MasterId,
    pub rescinded: Vec<Offer>,
}

/// Outcome of an agent crash.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentLoss {
    pub lost: Vec<TaskRecord>,
    pub rescinded: Vec<Offer>,
}

#[derive(Clone, Debug)]
pub struct Master {
    group: MasterGroup,
    agents: BTreeMap<AgentId, AgentState>,
    frameworks: BTreeMap<FrameworkId, FrameworkHandle>,
    tasks: BTreeMap<TaskId, TaskRecord>,
    offers: BTreeMap<OfferId, Offer>,
    next_offer: u64,
    round: u64,
    /// (agent, framework) → round in which the framework last declined the agent.
    declines: BTreeMap<(AgentId, FrameworkId), u64>,
    offer_ttl: SimTime,
}

impl Master {
    pub fn new(group: MasterGroup, offer_ttl: SimTime) -> Self {
        assert!(offer_ttl > 0, "offer ttl must be positive");
        Master {
            group,
            agents: BTreeMap::new(),
            frameworks: BTreeMap::new(),
            tasks: BTreeMap::new(),
            offers: BTreeMap::new(),
            next_offer: 1,
            round: 0,
            declines: BTreeMap::new(),
            offer_ttl,
        }
    }

    pub fn register_agent(&mut self, spec: AgentSpec) -> Result<(), MasterError> {
        if self.agents.contains_key(&spec.agent_id) {
            return Err(MasterError::DuplicateAgent(spec.agent_id));
        }
        self.agents
            .insert(spec.agent_id.clone(), AgentState::new(spec));
        Ok(())
    }

    pub fn register_framework(&mut self, framework_id: FrameworkId, name: impl Into<String>) {
        self.frameworks
            .entry(framework_id.clone())
            .or_insert_with(|| FrameworkHandle {
                framework_id,
                name: name.into(),
                allocated: ResourceVector::ZERO,
            });
    }

    pub fn group(&self) -> &MasterGroup {
        &self.group
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn offer_ttl(&self) -> SimTime {
        self.offer_ttl
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values()
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentState> {
        self.agents.get(id)
    }

    pub fn frameworks(&self) -> impl Iterator<Item = &FrameworkHandle> {
        self.frameworks.values()
    }

    pub fn framework(&self, id: &FrameworkId) -> Option<&FrameworkHandle> {
        self.frameworks.get(id)
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskRecord> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.tasks.values()
    }

    pub fn offer(&self, id: OfferId) -> Option<&Offer> {
        self.offers.get(&id)
    }

    pub fn outstanding_offers(&self) -> impl Iterator<Item = &Offer> {
        self.offers.values()
    }

    /// Sum of the totals of alive agents.
    pub fn cluster_total(&self) -> ResourceVector {
        self.agents
            .values()
            .filter(|a| a.alive)
            .map(|a| a.spec.total)
            .sum()
    }

    // ---- master group -------------------------------------------------

    /// Elects a leader when the office is vacant. A new leader rescinds every
    /// offer its predecessor left outstanding.
    pub fn ensure_leader(&mut self) -> Result<Option<Failover>, MasterError> {
        match self.group.ensure_leader()? {
            None => Ok(None),
            Some(leader) => {
                let ids: Vec<OfferId> = self.offers.keys().copied().collect();
                let rescinded = ids
                    .into_iter()
                    .map(|id| self.unlock_offer(id))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Some(Failover { leader, rescinded }))
            }
        }
    }

    /// Returns true when the crash cost the group its leader.
    pub fn crash_master(&mut self, id: &MasterId) -> Result<bool, MasterError> {
        self.group.crash(id)
    }

    pub fn recover_master(&mut self, id: &MasterId) -> Result<(), MasterError> {
        self.group.recover(id)
    }

    fn require_leader(&self) -> Result<(), MasterError> {
        if !self.group.has_quorum() {
            return Err(MasterError::NoQuorum);
        }
        if self.group.leader().is_none() {
            return Err(MasterError::NoLeader);
        }
        Ok(())
    }

    // ---- offers -------------------------------------------------------

    /// Starts a new allocation round; callers issuing offers by hand (the
    /// static-partition baseline) use this together with [`Master::offer_agent`].
    pub fn begin_round(&mut self) -> Result<u64, MasterError> {
        self.require_leader()?;
        self.round += 1;
        Ok(self.round)
    }

    /// True when `framework` declined `agent` in the round before the current one.
    pub fn backed_off(&self, agent: &AgentId, framework: &FrameworkId) -> bool {
        self.declines
            .get(&(agent.clone(), framework.clone()))
            .is_some_and(|&r| r + 1 == self.round)
    }

    /// Drops every decline filter `framework` holds, as a framework does when
    /// new work arrives. Returns how many filters were cleared.
    pub fn revive(&mut self, framework: &FrameworkId) -> usize {
        let before = self.declines.len();
        self.declines.retain(|(_, f), _| f != framework);
        before - self.declines.len()
    }

    /// Free resources an offer would carry; `None` when there is nothing
    /// worth offering (dead agent, or no free cpus and no free mem).
    pub fn offerable(&self, agent: &AgentId) -> Result<Option<ResourceVector>, MasterError> {
        let state = self
            .agents
            .get(agent)
            .ok_or_else(|| MasterError::UnknownAgent(agent.clone()))?;
        if !state.alive {
            return Ok(None);
        }
        let free = state.free()?;
        if free.cpus.is_zero() && free.mem.is_zero() {
            return Ok(None);
        }
        Ok(Some(free))
    }

    /// Locks all of an agent's free resources into one offer for `framework`.
    pub fn offer_agent(
        &mut self,
        agent: &AgentId,
        framework: &FrameworkId,
        scope: OfferScope,
        now: SimTime,
    ) -> Result<Offer, MasterError> {
        self.require_leader()?;
        if !self.frameworks.contains_key(framework) {
            return Err(MasterError::UnknownFramework(framework.clone()));
        }
        let free = self
            .offerable(agent)?
            .ok_or_else(|| MasterError::NothingToOffer(agent.clone()))?;
        let state = self.agents.get_mut(agent).expect("checked by offerable");
        state.offered = state.offered + free;
        let offer = Offer {
            offer_id: OfferId(self.next_offer),
            agent_id: agent.clone(),
            framework_id: framework.clone(),
            resources: free,
            attributes: state.spec.attributes.clone(),
            zone: state.spec.zone.clone(),
            scope,
            issued_at: now,
            expires_at: now + self.offer_ttl,
        };
        self.next_offer += 1;
        self.offers.insert(offer.offer_id, offer.clone());
        Ok(offer)
    }

    /// One dynamic allocation round: every alive agent with free capacity is
    /// offered, whole, to the lowest-dominant-share framework that wants
    /// offers and has not just declined that agent. The fair order is fixed
    /// at the start of the round.
    pub fn allocation_round(
        &mut self,
        now: SimTime,
        interest: &dyn OfferInterest,
    ) -> Result<Vec<Offer>, MasterError> {
        self.begin_round()?;
        let total = self.cluster_total();
        // Interest cannot change mid-round, so ask each framework once.
        let order: Vec<FrameworkId> = sort_frameworks_fair(self.frameworks.values(), &total)
            .into_iter()
            .filter(|f| interest.wants(f, &OfferScope::Any))
            .collect();
        if order.is_empty() {
            return Ok(Vec::new());
        }
        let agent_ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        let mut offers = Vec::new();
        for agent in agent_ids {
            if self.offerable(&agent)?.is_none() {
                continue;
            }
            let recipient = order.iter().find(|f| !self.backed_off(&agent, f)).cloned();
            if let Some(framework) = recipient {
                offers.push(self.offer_agent(&agent, &framework, OfferScope::Any, now)?);
            }
        }
        Ok(offers)
    }

    fn unlock_offer(&mut self, id: OfferId) -> Result<Offer, MasterError> {
        let offer = self
            .offers
            .remove(&id)
            .ok_or(MasterError::UnknownOffer(id))?;
        let agent = self
            .agents
            .get_mut(&offer.agent_id)
            .ok_or_else(|| MasterError::UnknownAgent(offer.agent_id.clone()))?;
        agent.offered = agent.offered.checked_sub(&offer.resources)?;
        Ok(offer)
    }

    fn record_decline(&mut self, offer: &Offer) {
        self.declines.insert(
            (offer.agent_id.clone(), offer.framework_id.clone()),
            self.round,
        );
    }

    /// Applies a framework's answer to an outstanding offer.
    ///
    /// Declines (and accepts of nothing) return the resources and back the
    /// framework off that agent for one round. An over-committed or otherwise
    /// invalid accept is rejected wholesale and handled like a decline.
    pub fn handle_response(
        &mut self,
        offer_id: OfferId,
        response: OfferResponse,
        now: SimTime,
    ) -> Result<Vec<TaskRecord>, MasterError> {
        let expired = self
            .offers
            .get(&offer_id)
            .ok_or(MasterError::UnknownOffer(offer_id))?
            .expires_at
            <= now;
        let offer = self.unlock_offer(offer_id)?;
        if expired {
            return Err(MasterError::OfferExpired(offer_id));
        }
        let specs = match response {
            OfferResponse::Accept(specs) if !specs.is_empty() => specs,
            _ => {
                self.record_decline(&offer);
                return Ok(Vec::new());
            }
        };

        let requested: ResourceVector = specs.iter().map(|s| s.request).sum();
        if !offer.resources.contains(&requested) {
            self.record_decline(&offer);
            return Err(MasterError::OverCommit {
                offer: offer_id,
                requested,
                offered: offer.resources,
            });
        }
        let mut seen = BTreeSet::new();
        for spec in &specs {
            if self.tasks.contains_key(&spec.task_id) || !seen.insert(&spec.task_id) {
                self.record_decline(&offer);
                return Err(MasterError::DuplicateTask(spec.task_id.clone()));
            }
        }

        let agent = self
            .agents
            .get_mut(&offer.agent_id)
            .expect("offer agent exists");
        agent.allocated = agent.allocated + requested;
        let framework = self
            .frameworks
            .get_mut(&offer.framework_id)
            .ok_or_else(|| MasterError::UnknownFramework(offer.framework_id.clone()))?;
        framework.allocated = framework.allocated + requested;

        let mut records = Vec::with_capacity(specs.len());
        for spec in specs {
            agent.running_tasks.insert(spec.task_id.clone());
            let record = TaskRecord {
                task_id: spec.task_id,
                framework_id: offer.framework_id.clone(),
                agent_id: offer.agent_id.clone(),
                request: spec.request,
                container_image: spec.container_image,
                state: TaskState::Staging,
                started_at: now,
                ended_at: None,
            };
            self.tasks.insert(record.task_id.clone(), record.clone());
            records.push(record);
        }
        Ok(records)
    }

    /// Rescinds every outstanding offer with `expires_at <= now`.
    pub fn expire_offers(&mut self, now: SimTime) -> Result<Vec<Offer>, MasterError> {
        let due: Vec<OfferId> = self
            .offers
            .values()
            .filter(|o| o.expires_at <= now)
            .map(|o| o.offer_id)
            .collect();
        due.into_iter().map(|id| self.unlock_offer(id)).collect()
    }

    // ---- tasks and agents --------------------------------------------

    /// Moves a task along its lifecycle. Terminal transitions release the
    /// task's resources from its agent and its framework.
    pub fn task_transition(
        &mut self,
        task_id: &TaskId,
        event: TaskEvent,
        now: SimTime,
    ) -> Result<TaskRecord, MasterError> {
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| MasterError::UnknownTask(task_id.clone()))?;
        let next = task
            .state
            .apply(event)
            .map_err(|source| MasterError::IllegalTransition {
                task: task_id.clone(),
                source,
            })?;
        if next.is_terminal() {
            let agent = self
                .agents
                .get_mut(&task.agent_id)
                .ok_or_else(|| MasterError::UnknownAgent(task.agent_id.clone()))?;
            agent.allocated = agent.allocated.checked_sub(&task.request)?;
            agent.running_tasks.remove(task_id);
            let framework = self
                .frameworks
                .get_mut(&task.framework_id)
                .ok_or_else(|| MasterError::UnknownFramework(task.framework_id.clone()))?;
            framework.allocated = framework.allocated.checked_sub(&task.request)?;
            task.ended_at = Some(now);
        }
        task.state = next;
        Ok(task.clone())
    }

    /// Marks an agent dead: its tasks are lost and its offers rescinded.
    pub fn crash_agent(&mut self, id: &AgentId, now: SimTime) -> Result<AgentLoss, MasterError> {
        let state = self
            .agents
            .get(id)
            .ok_or_else(|| MasterError::UnknownAgent(id.clone()))?;
        if !state.alive {
            return Ok(AgentLoss {
                lost: Vec::new(),
                rescinded: Vec::new(),
            });
        }
        let running: Vec<TaskId> = state.running_tasks.iter().cloned().collect();
        let offer_ids: Vec<OfferId> = self
            .offers
            .values()
            .filter(|o| &o.agent_id == id)
            .map(|o| o.offer_id)
            .collect();
        let rescinded = offer_ids
            .into_iter()
            .map(|o| self.unlock_offer(o))
            .collect::<Result<Vec<_>, _>>()?;
        let lost = running
            .iter()
            .map(|t| self.task_transition(t, TaskEvent::AgentLost, now))
            .collect::<Result<Vec<_>, _>>()?;
        self.agents.get_mut(id).expect("checked above").alive = false;
        Ok(AgentLoss { lost, rescinded })
    }

    /// Brings an agent back with an empty allocation.
    pub fn recover_agent(&mut self, id: &AgentId) -> Result<(), MasterError> {
        let state = self
            .agents
            .get_mut(id)
            .ok_or_else(|| MasterError::UnknownAgent(id.clone()))?;
        state.alive = true;
        Ok(())
    }

    // ---- invariants --------------------------------------------------

    /// Exact conservation checks over the whole registry.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.group.check()?;
        let mut offered: BTreeMap<&AgentId, ResourceVector> = BTreeMap::new();
        let mut offers_per_agent: BTreeMap<&AgentId, usize> = BTreeMap::new();
        for offer in self.offers.values() {
            let e = offered.entry(&offer.agent_id).or_default();
            *e = *e + offer.resources;
            *offers_per_agent.entry(&offer.agent_id).or_default() += 1;
            if offer.expires_at <= offer.issued_at {
                return Err(format!("{} expires before it is issued", offer.offer_id));
            }
        }
        if let Some((agent, n)) = offers_per_agent.iter().find(|(_, &n)| n > 1) {
            return Err(format!("agent {agent} has {n} outstanding offers"));
        }

        let mut per_agent: BTreeMap<&AgentId, ResourceVector> = BTreeMap::new();
        let mut per_framework: BTreeMap<&FrameworkId, ResourceVector> = BTreeMap::new();
        let mut live_per_agent: BTreeMap<&AgentId, usize> = BTreeMap::new();
        for task in self.tasks.values().filter(|t| !t.state.is_terminal()) {
            let e = per_agent.entry(&task.agent_id).or_default();
            *e = *e + task.request;
            *live_per_agent.entry(&task.agent_id).or_default() += 1;
            let e = per_framework.entry(&task.framework_id).or_default();
            *e = *e + task.request;
        }

        for (id, agent) in &self.agents {
            let used = agent.allocated + agent.offered;
            if !agent.spec.total.contains(&used) {
                return Err(format!(
                    "agent {id}: allocated {} + offered {} exceeds total {}",
                    agent.allocated, agent.offered, agent.spec.total
                ));
            }
            let tasks_sum = per_agent.get(id).copied().unwrap_or_default();
            if tasks_sum != agent.allocated {
                return Err(format!(
                    "agent {id}: allocated {} but running tasks sum to {tasks_sum}",
                    agent.allocated
                ));
            }
            let offer_sum = offered.get(id).copied().unwrap_or_default();
            if offer_sum != agent.offered {
                return Err(format!(
                    "agent {id}: offered {} but outstanding offers sum to {offer_sum}",
                    agent.offered
                ));
            }
            let live = live_per_agent.get(id).copied().unwrap_or(0);
            if live != agent.running_tasks.len() {
                return Err(format!("agent {id}: running task set out of sync"));
            }
            if !agent.alive && !(agent.allocated.is_zero() && agent.offered.is_zero()) {
                return Err(format!("dead agent {id} still holds resources"));
            }
        }
        for (id, fw) in &self.frameworks {
            let sum = per_framework.get(id).copied().unwrap_or_default();
            if sum != fw.allocated {
                return Err(format!(
                    "framework {id}: allocated {} but its tasks sum to {sum}",
                    fw.allocated
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(cpus: f64, mem: f64) -> ResourceVector {
        ResourceVector::from_f64(cpus, mem).unwrap()
    }

    fn agent(id: &str, cpus: f64, mem: f64) -> AgentSpec {
        AgentSpec::new(AgentId::new(id), rv(cpus, mem), AttributeSet::new(), "a").unwrap()
    }

    fn fid(s: &str) -> FrameworkId {
        FrameworkId::new(s)
    }

    fn master_with(agents: &[AgentSpec], frameworks: &[&str]) -> Master {
        let mut m = Master::new(MasterGroup::standard(), DEFAULT_OFFER_TTL);
        for a in agents {
            m.register_agent(a.clone()).unwrap();
        }
        for f in frameworks {
            m.register_framework(fid(f), *f);
        }
        m.ensure_leader().unwrap();
        m
    }

    fn everyone(_: &FrameworkId, _: &OfferScope) -> bool {
        true
    }

    fn spec(id: &str, cpus: f64, mem: f64) -> TaskSpec {
        TaskSpec {
            task_id: TaskId::new(id),
            request: rv(cpus, mem),
            container_image: None,
            payload: String::new(),
        }
    }

    /// Gives `framework` a task of the given size on a dedicated filler agent.
    fn preload(m: &mut Master, framework: &str, cpus: f64, mem: f64) {
        let filler = format!("fill-{framework}");
        m.register_agent(agent(&filler, cpus, mem)).unwrap();
        m.begin_round().unwrap();
        let offer = m
            .offer_agent(
                &AgentId::new(filler.as_str()),
                &fid(framework),
                OfferScope::Any,
                0,
            )
            .unwrap();
        m.handle_response(
            offer.offer_id,
            OfferResponse::Accept(vec![spec(&format!("{framework}-pre"), cpus, mem)]),
            0,
        )
        .unwrap();
    }

    #[test]
    fn single_agent_single_framework() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let offers = m.allocation_round(0, &everyone).unwrap();
        assert_eq!(offers.len(), 1);
        assert_eq!(offers[0].resources, rv(4.0, 8192.0));
        assert_eq!(offers[0].framework_id, fid("f"));
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().offered,
            rv(4.0, 8192.0)
        );
    }

    #[test]
    fn no_free_agents_no_offers() {
        let mut m = master_with(&[], &["f"]);
        assert!(m.allocation_round(0, &everyone).unwrap().is_empty());
    }

    #[test]
    fn all_offers_go_to_the_lowest_dominant_share() {
        // Oracle: A holds 0.5 of the cluster, B 0.1; the order is fixed for the
        // round, so both free agents go to B.
        let mut m = master_with(
            &[agent("x1", 2.0, 2048.0), agent("x2", 2.0, 2048.0)],
            &["A", "B"],
        );
        preload(&mut m, "A", 5.0, 5120.0);
        preload(&mut m, "B", 1.0, 1024.0);
        // The filler agents are fully allocated; the cluster totals (10, 10240).
        let total = m.cluster_total();
        assert_eq!(total, rv(10.0, 10240.0));
        let a = dominant_share(&m.framework(&fid("A")).unwrap().allocated, &total);
        let b = dominant_share(&m.framework(&fid("B")).unwrap().allocated, &total);
        assert_eq!(a, Share::new(1, 2));
        assert_eq!(b, Share::new(1, 10));
        let offers = m.allocation_round(5, &everyone).unwrap();
        assert_eq!(offers.len(), 2);
        assert!(offers.iter().all(|o| o.framework_id == fid("B")));
    }

    #[test]
    fn exact_fit_accept_launches_everything() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let offer = m.allocation_round(0, &everyone).unwrap().remove(0);
        let tasks = m
            .handle_response(
                offer.offer_id,
                OfferResponse::Accept(vec![spec("t1", 2.0, 4096.0), spec("t2", 2.0, 4096.0)]),
                1,
            )
            .unwrap();
        assert_eq!(tasks.len(), 2);
        assert!(tasks.iter().all(|t| t.state == TaskState::Staging));
        let a = m.agent(&AgentId::new("a1")).unwrap();
        assert_eq!(a.free().unwrap(), ResourceVector::ZERO);
        assert_eq!(a.offered, ResourceVector::ZERO);
        m.check_invariants().unwrap();
    }

    #[test]
    fn partial_accept_returns_leftover() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let offer = m.allocation_round(0, &everyone).unwrap().remove(0);
        m.handle_response(
            offer.offer_id,
            OfferResponse::Accept(vec![spec("t1", 1.0, 4096.0)]),
            1,
        )
        .unwrap();
        let a = m.agent(&AgentId::new("a1")).unwrap();
        assert_eq!(a.free().unwrap(), rv(3.0, 4096.0));
        m.check_invariants().unwrap();
    }

    #[test]
    fn decline_restores_free_pool() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let before = m.agent(&AgentId::new("a1")).unwrap().free().unwrap();
        let offer = m.allocation_round(0, &everyone).unwrap().remove(0);
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().free().unwrap(),
            ResourceVector::ZERO
        );
        m.handle_response(offer.offer_id, OfferResponse::Decline, 1)
            .unwrap();
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().free().unwrap(),
            before
        );
    }

    #[test]
    fn over_commit_is_rejected_wholesale() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let offer = m.allocation_round(0, &everyone).unwrap().remove(0);
        let err = m
            .handle_response(
                offer.offer_id,
                OfferResponse::Accept(vec![spec("t1", 5.0, 1.0)]),
                1,
            )
            .unwrap_err();
        assert!(matches!(err, MasterError::OverCommit { .. }));
        assert_eq!(m.tasks().count(), 0);
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().free().unwrap(),
            rv(4.0, 8192.0)
        );
        m.check_invariants().unwrap();
    }

    #[test]
    fn late_response_hits_expired_offer() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let offer = m.allocation_round(0, &everyone).unwrap().remove(0);
        let err = m
            .handle_response(offer.offer_id, OfferResponse::Decline, DEFAULT_OFFER_TTL)
            .unwrap_err();
        assert_eq!(err, MasterError::OfferExpired(offer.offer_id));
        assert_eq!(m.outstanding_offers().count(), 0);
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().offered,
            ResourceVector::ZERO
        );
    }

    #[test]
    fn expiry_is_inclusive_and_counts_only_due_offers() {
        let mut m = master_with(&[], &["f"]);
        assert!(m.expire_offers(0).unwrap().is_empty());

        let mut m = master_with(
            &[
                agent("a1", 1.0, 1.0),
                agent("a2", 1.0, 1.0),
                agent("a3", 1.0, 1.0),
            ],
            &["f"],
        );
        m.begin_round().unwrap();
        m.offer_agent(&AgentId::new("a1"), &fid("f"), OfferScope::Any, 0)
            .unwrap();
        m.offer_agent(&AgentId::new("a2"), &fid("f"), OfferScope::Any, 10_000)
            .unwrap();
        m.offer_agent(&AgentId::new("a3"), &fid("f"), OfferScope::Any, 20_000)
            .unwrap();
        // Enumerate: expiries at 30s, 40s, 50s; at now = 30s only the first is due.
        let expired = m.expire_offers(DEFAULT_OFFER_TTL).unwrap();
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].agent_id, AgentId::new("a1"));
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().offered,
            ResourceVector::ZERO
        );
        assert_eq!(m.outstanding_offers().count(), 2);
    }

    #[test]
    fn declined_agent_skips_framework_for_one_round() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["a", "b"]);
        let o = m.allocation_round(0, &everyone).unwrap().remove(0);
        assert_eq!(o.framework_id, fid("a"));
        m.handle_response(o.offer_id, OfferResponse::Decline, 0)
            .unwrap();
        let o = m.allocation_round(5, &everyone).unwrap().remove(0);
        assert_eq!(o.framework_id, fid("b"));
        m.handle_response(o.offer_id, OfferResponse::Decline, 5)
            .unwrap();
        let o = m.allocation_round(10, &everyone).unwrap().remove(0);
        assert_eq!(o.framework_id, fid("a"));
    }

    #[test]
    fn uninterested_frameworks_get_nothing() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["a", "b"]);
        let only_b = |f: &FrameworkId, _: &OfferScope| f.as_str() == "b";
        let offers = m.allocation_round(0, &only_b).unwrap();
        assert_eq!(offers[0].framework_id, fid("b"));
        let nobody = |_: &FrameworkId, _: &OfferScope| false;
        m.handle_response(offers[0].offer_id, OfferResponse::Decline, 0)
            .unwrap();
        assert!(m.allocation_round(5, &nobody).unwrap().is_empty());
    }

    #[test]
    fn task_lifecycle_releases_on_terminal() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let o = m.allocation_round(0, &everyone).unwrap().remove(0);
        m.handle_response(
            o.offer_id,
            OfferResponse::Accept(vec![spec("t1", 2.0, 2048.0)]),
            0,
        )
        .unwrap();
        let t = TaskId::new("t1");
        assert_eq!(
            m.task_transition(&t, TaskEvent::Launched, 1).unwrap().state,
            TaskState::Running
        );
        assert_eq!(m.framework(&fid("f")).unwrap().allocated, rv(2.0, 2048.0));
        let rec = m.task_transition(&t, TaskEvent::AgentLost, 2).unwrap();
        assert_eq!(rec.state, TaskState::Lost);
        assert_eq!(rec.ended_at, Some(2));
        assert_eq!(
            m.framework(&fid("f")).unwrap().allocated,
            ResourceVector::ZERO
        );
        assert_eq!(
            m.agent(&AgentId::new("a1")).unwrap().allocated,
            ResourceVector::ZERO
        );
        assert!(matches!(
            m.task_transition(&t, TaskEvent::Kill, 3),
            Err(MasterError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn completed_from_staging_is_illegal() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let o = m.allocation_round(0, &everyone).unwrap().remove(0);
        m.handle_response(
            o.offer_id,
            OfferResponse::Accept(vec![spec("t1", 1.0, 1.0)]),
            0,
        )
        .unwrap();
        assert!(m
            .task_transition(&TaskId::new("t1"), TaskEvent::Completed, 1)
            .is_err());
        m.task_transition(&TaskId::new("t1"), TaskEvent::Launched, 1)
            .unwrap();
        m.task_transition(&TaskId::new("t1"), TaskEvent::Completed, 2)
            .unwrap();
        assert!(m
            .task_transition(&TaskId::new("t1"), TaskEvent::Kill, 3)
            .is_err());
    }

    #[test]
    fn agent_crash_loses_tasks_and_rescinds_offers() {
        let mut m = master_with(
            &[agent("a1", 4.0, 8192.0), agent("a2", 4.0, 8192.0)],
            &["f"],
        );
        let mut offers = m.allocation_round(0, &everyone).unwrap();
        let first = offers.remove(0);
        m.handle_response(
            first.offer_id,
            OfferResponse::Accept(vec![spec("t1", 1.0, 1.0)]),
            0,
        )
        .unwrap();
        let loss = m.crash_agent(&AgentId::new("a1"), 3).unwrap();
        assert_eq!(loss.lost.len(), 1);
        assert!(loss.rescinded.is_empty());
        let loss = m.crash_agent(&AgentId::new("a2"), 3).unwrap();
        assert_eq!(loss.rescinded.len(), 1);
        m.check_invariants().unwrap();
        assert!(m.allocation_round(5, &everyone).unwrap().is_empty());
        m.recover_agent(&AgentId::new("a1")).unwrap();
        assert_eq!(m.allocation_round(10, &everyone).unwrap().len(), 1);
    }

    #[test]
    fn failover_rescinds_every_outstanding_offer() {
        let mut m = master_with(
            &[
                agent("a1", 4.0, 8192.0),
                agent("a2", 4.0, 8192.0),
                agent("a3", 1.0, 1.0),
            ],
            &["f"],
        );
        let outstanding = m.allocation_round(0, &everyone).unwrap().len();
        assert_eq!(outstanding, 3);
        assert!(m.crash_master(&MasterId::new("m1")).unwrap());
        assert_eq!(m.allocation_round(5, &everyone), Err(MasterError::NoLeader));
        let failover = m.ensure_leader().unwrap().unwrap();
        assert_eq!(failover.leader, MasterId::new("m2"));
        assert_eq!(failover.rescinded.len(), outstanding);
        assert_eq!(m.outstanding_offers().count(), 0);
        m.check_invariants().unwrap();
    }

    #[test]
    fn no_quorum_blocks_rounds() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        m.crash_master(&MasterId::new("m2")).unwrap();
        m.crash_master(&MasterId::new("m3")).unwrap();
        assert_eq!(m.ensure_leader(), Err(MasterError::NoQuorum));
        assert_eq!(m.allocation_round(0, &everyone), Err(MasterError::NoQuorum));
        assert_eq!(m.outstanding_offers().count(), 0);
    }

    #[test]
    fn duplicate_task_ids_are_rejected() {
        let mut m = master_with(&[agent("a1", 4.0, 8192.0)], &["f"]);
        let o = m.allocation_round(0, &everyone).unwrap().remove(0);
        let err = m
            .handle_response(
                o.offer_id,
                OfferResponse::Accept(vec![spec("t", 1.0, 1.0), spec("t", 1.0, 1.0)]),
                0,
            )
            .unwrap_err();
        assert_eq!(err, MasterError::DuplicateTask(TaskId::new("t")));
        m.check_invariants().unwrap();
    }
}
