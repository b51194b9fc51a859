//! Long-running service orchestration on top of resource offers.
//!
//! The framework keeps a desired instance count per app and reconciles toward
//! it one offer at a time: deficits are filled from incoming offers (oldest
//! app first), dead instances simply widen the deficit, and every change to an
//! app's definition is recorded as a new deployment version.

mod app;
mod constraints;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, AppId, FrameworkId, TaskId};
use crate::master::{Offer, OfferResponse, OfferScope, TaskSpec};
use crate::resources::{image_runs_on, Host, ResourceVector, SimTime, TaskRecord, TaskState};

pub use app::{
    parse_app_definition, AppDefinition, AppError, Constraint, HealthCheck, Operator, Volume,
};
pub use constraints::{evaluate_constraints, placement_is_valid, ConstraintError, Pattern};

/// First host port handed out on every agent.
pub const HOST_PORT_BASE: u16 = 31000;
pub const HOST_PORT_MAX: u16 = 32000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("unknown app {0}")]
    UnknownApp(AppId),
    #[error("app {app} has no deployment version {version}")]
    UnknownVersion { app: AppId, version: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceState {
    Staging,
    Running,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub task_id: TaskId,
    pub host: Host,
    /// (container port, host port) pairs.
    pub ports: Vec<(u16, u16)>,
    pub state: InstanceState,
    pub launched_at: SimTime,
    pub consecutive_failures: u32,
    /// A hung instance keeps running but fails its health checks.
    pub hung: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppStatus {
    pub definition: AppDefinition,
    /// Launched, non-terminal instances in launch order.
    pub instances: Vec<Instance>,
    pub version: u64,
    created_seq: u64,
    last_health_check: SimTime,
}

impl AppStatus {
    pub fn deficit(&self) -> u32 {
        self.definition
            .instances
            .saturating_sub(self.instances.len() as u32)
    }

    pub fn running(&self) -> impl Iterator<Item = &Instance> {
        self.instances
            .iter()
            .filter(|i| i.state == InstanceState::Running)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub version: u64,
    pub timestamp: SimTime,
    pub definition: AppDefinition,
}

/// Result of deploy/scale/rollback: the new version and the tasks the caller
/// must kill through the master.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeploymentChange {
    pub app_id: AppId,
    pub version: u64,
    pub kills: Vec<TaskId>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub app_id: AppId,
    pub hostname: AgentId,
    pub host_port: u16,
}

#[derive(Clone, Debug)]
pub struct ServiceFramework {
    id: FrameworkId,
    isolation: bool,
    apps: BTreeMap<AppId, AppStatus>,
    history: BTreeMap<AppId, Vec<DeploymentRecord>>,
    owners: BTreeMap<TaskId, AppId>,
    used_ports: BTreeMap<AgentId, BTreeSet<u16>>,
    next_app_seq: u64,
    next_task: u64,
}

impl ServiceFramework {
    pub fn new(id: FrameworkId, isolation: bool) -> Self {
        ServiceFramework {
            id,
            isolation,
            apps: BTreeMap::new(),
            history: BTreeMap::new(),
            owners: BTreeMap::new(),
            used_ports: BTreeMap::new(),
            next_app_seq: 0,
            next_task: 1,
        }
    }

    pub fn id(&self) -> &FrameworkId {
        &self.id
    }

    pub fn app(&self, id: &AppId) -> Option<&AppStatus> {
        self.apps.get(id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppStatus> {
        self.apps.values()
    }

    pub fn history(&self, id: &AppId) -> Option<&[DeploymentRecord]> {
        self.history.get(id).map(Vec::as_slice)
    }

    pub fn owns(&self, task: &TaskId) -> bool {
        self.owners.contains_key(task)
    }

    /// Tasks of launched, non-terminal instances.
    pub fn live_tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.owners.keys()
    }

    pub fn app_of(&self, task: &TaskId) -> Option<&AppId> {
        self.owners.get(task)
    }

    pub fn instance(&self, task: &TaskId) -> Option<&Instance> {
        let app = self.apps.get(self.owners.get(task)?)?;
        app.instances.iter().find(|i| &i.task_id == task)
    }

    // ---- deployments -------------------------------------------------

    /// Installs a definition. An existing app has all of its instances
    /// stopped; replacements come from subsequent offers.
    pub fn deploy(&mut self, definition: AppDefinition, now: SimTime) -> DeploymentChange {
        let app_id = definition.app_id.clone();
        let kills = match self.apps.get_mut(&app_id) {
            Some(status) => {
                status.definition = definition.clone();
                status.version += 1;
                status.last_health_check = now;
                let doomed: Vec<Instance> = status.instances.drain(..).collect();
                self.release(doomed)
            }
            None => {
                self.apps.insert(
                    app_id.clone(),
                    AppStatus {
                        definition: definition.clone(),
                        instances: Vec::new(),
                        version: 1,
                        created_seq: self.next_app_seq,
                        last_health_check: now,
                    },
                );
                self.next_app_seq += 1;
                Vec::new()
            }
        };
        let version = self.apps[&app_id].version;
        self.history
            .entry(app_id.clone())
            .or_default()
            .push(DeploymentRecord {
                version,
                timestamp: now,
                definition,
            });
        DeploymentChange {
            app_id,
            version,
            kills,
        }
    }

    /// Sets the instance count; surplus instances are stopped newest first.
    pub fn scale(
        &mut self,
        app_id: &AppId,
        instances: u32,
        now: SimTime,
    ) -> Result<DeploymentChange, ServiceError> {
        let status = self
            .apps
            .get_mut(app_id)
            .ok_or_else(|| ServiceError::UnknownApp(app_id.clone()))?;
        status.definition.instances = instances;
        status.version += 1;
        let keep = (instances as usize).min(status.instances.len());
        let doomed: Vec<Instance> = status.instances.drain(keep..).rev().collect();
        let version = status.version;
        let definition = status.definition.clone();
        let kills = self.release(doomed);
        self.history
            .entry(app_id.clone())
            .or_default()
            .push(DeploymentRecord {
                version,
                timestamp: now,
                definition,
            });
        Ok(DeploymentChange {
            app_id: app_id.clone(),
            version,
            kills,
        })
    }

    /// Redeploys the definition recorded at `version`, as a new version.
    pub fn rollback(
        &mut self,
        app_id: &AppId,
        version: u64,
        now: SimTime,
    ) -> Result<DeploymentChange, ServiceError> {
        let records = self
            .history
            .get(app_id)
            .ok_or_else(|| ServiceError::UnknownApp(app_id.clone()))?;
        let snapshot = records
            .iter()
            .find(|r| r.version == version)
            .ok_or_else(|| ServiceError::UnknownVersion {
                app: app_id.clone(),
                version,
            })?
            .definition
            .clone();
        Ok(self.deploy(snapshot, now))
    }

    fn release(&mut self, doomed: Vec<Instance>) -> Vec<TaskId> {
        doomed
            .into_iter()
            .map(|inst| {
                self.free_ports(&inst);
                self.owners.remove(&inst.task_id);
                inst.task_id
            })
            .collect()
    }

    fn free_ports(&mut self, inst: &Instance) {
        if let Some(used) = self.used_ports.get_mut(&inst.host.hostname) {
            for (_, host_port) in &inst.ports {
                used.remove(host_port);
            }
        }
    }

    // ---- offers ------------------------------------------------------

    pub fn wants_offers(&self, scope: &OfferScope) -> bool {
        matches!(scope, OfferScope::Any | OfferScope::Services)
            && self.apps.values().any(|a| a.deficit() > 0)
    }

    /// Greedily packs deficit instances onto the offer, oldest app first.
    pub fn on_offer(&mut self, offer: &Offer, now: SimTime) -> OfferResponse {
        if !matches!(offer.scope, OfferScope::Any | OfferScope::Services) {
            return OfferResponse::Decline;
        }
        let host = offer.host();
        let mut remaining = offer.resources;
        let mut specs = Vec::new();

        let mut order: Vec<(u64, AppId)> = self
            .apps
            .values()
            .filter(|a| a.deficit() > 0)
            .map(|a| (a.created_seq, a.definition.app_id.clone()))
            .collect();
        order.sort();

        for (_, app_id) in order {
            loop {
                let status = &self.apps[&app_id];
                let def = &status.definition;
                if status.deficit() == 0
                    || !remaining.contains(&def.resources)
                    || !image_runs_on(def.container_image.as_deref(), &host, self.isolation)
                {
                    break;
                }
                let placed: Vec<&Host> = status.instances.iter().map(|i| &i.host).collect();
                if !evaluate_constraints(&def.constraints, &host, &placed).unwrap_or(false) {
                    break;
                }
                let Some(host_ports) = self.pick_ports(&host.hostname, def.ports.len()) else {
                    break;
                };
                let task_id = TaskId::new(format!("{}#{}", app_id, self.next_task));
                self.next_task += 1;
                let request = def.resources;
                let image = def.container_image.clone();
                let ports: Vec<(u16, u16)> = def.ports.iter().copied().zip(host_ports).collect();

                self.used_ports
                    .entry(host.hostname.clone())
                    .or_default()
                    .extend(ports.iter().map(|&(_, h)| h));
                self.owners.insert(task_id.clone(), app_id.clone());
                let status = self.apps.get_mut(&app_id).expect("app exists");
                status.instances.push(Instance {
                    task_id: task_id.clone(),
                    host: host.clone(),
                    ports,
                    state: InstanceState::Staging,
                    launched_at: now,
                    consecutive_failures: 0,
                    hung: false,
                });
                remaining = remaining
                    .checked_sub(&request)
                    .expect("containment checked above");
                specs.push(TaskSpec {
                    task_id,
                    request,
                    container_image: image,
                    payload: app_id.to_string(),
                });
            }
        }
        if specs.is_empty() {
            OfferResponse::Decline
        } else {
            OfferResponse::Accept(specs)
        }
    }

    /// Lowest free host ports on an agent.
    fn pick_ports(&self, agent: &AgentId, n: usize) -> Option<Vec<u16>> {
        let used = self.used_ports.get(agent);
        let picked: Vec<u16> = (HOST_PORT_BASE..=HOST_PORT_MAX)
            .filter(|p| used.is_none_or(|u| !u.contains(p)))
            .take(n)
            .collect();
        (picked.len() == n).then_some(picked)
    }

    /// Drops instances whose launch the master refused.
    pub fn forget_launches(&mut self, tasks: &[TaskId]) {
        for task in tasks {
            self.remove_instance(task);
        }
    }

    fn remove_instance(&mut self, task: &TaskId) -> Option<Instance> {
        let app_id = self.owners.remove(task)?;
        let status = self.apps.get_mut(&app_id)?;
        let idx = status.instances.iter().position(|i| &i.task_id == task)?;
        let inst = status.instances.remove(idx);
        self.free_ports(&inst);
        Some(inst)
    }

    /// Status update from the master. A terminal update removes the instance
    /// and so widens the deficit; the replacement waits for the next offer.
    pub fn on_task_update(&mut self, task: &TaskRecord) {
        if task.state == TaskState::Running {
            let Some(app_id) = self.owners.get(&task.task_id) else {
                return;
            };
            if let Some(inst) = self
                .apps
                .get_mut(app_id)
                .and_then(|s| s.instances.iter_mut().find(|i| i.task_id == task.task_id))
            {
                inst.state = InstanceState::Running;
            }
        } else if task.state.is_terminal() {
            self.remove_instance(&task.task_id);
        }
    }

    // ---- health ------------------------------------------------------

    /// Oldest running instance of an app.
    pub fn pick_instance(&self, app_id: &AppId) -> Option<TaskId> {
        self.apps
            .get(app_id)?
            .running()
            .next()
            .map(|i| i.task_id.clone())
    }

    pub fn has_health_check(&self, app_id: &AppId) -> bool {
        self.apps
            .get(app_id)
            .is_some_and(|a| a.definition.health_check.is_some())
    }

    pub fn mark_hung(&mut self, task: &TaskId) -> bool {
        let Some(app_id) = self.owners.get(task) else {
            return false;
        };
        match self
            .apps
            .get_mut(app_id)
            .and_then(|s| s.instances.iter_mut().find(|i| &i.task_id == task))
        {
            Some(inst) => {
                inst.hung = true;
                true
            }
            None => false,
        }
    }

    /// Runs due health checks; instances that reach the failure threshold are
    /// dropped and returned for the caller to kill.
    pub fn health_checks(&mut self, now: SimTime) -> Vec<TaskId> {
        let mut doomed = Vec::new();
        for status in self.apps.values_mut() {
            let Some(hc) = status.definition.health_check else {
                continue;
            };
            if now < status.last_health_check + hc.interval {
                continue;
            }
            status.last_health_check = now;
            for inst in status
                .instances
                .iter_mut()
                .filter(|i| i.state == InstanceState::Running)
            {
                if inst.hung {
                    inst.consecutive_failures += 1;
                } else {
                    inst.consecutive_failures = 0;
                }
                if inst.consecutive_failures >= hc.threshold {
                    doomed.push(inst.task_id.clone());
                }
            }
        }
        for task in &doomed {
            self.remove_instance(task);
        }
        doomed
    }

    // ---- discovery ---------------------------------------------------

    /// One entry per running instance that exposes a port, using its first
    /// host port. Sorted by (app, host, port).
    pub fn endpoints(&self) -> Vec<Endpoint> {
        let mut out: Vec<Endpoint> = self
            .apps
            .values()
            .flat_map(|s| {
                s.running().filter_map(|i| {
                    i.ports.first().map(|&(_, host_port)| Endpoint {
                        app_id: s.definition.app_id.clone(),
                        hostname: i.host.hostname.clone(),
                        host_port,
                    })
                })
            })
            .collect();
        out.sort();
        out
    }

    /// Constraint safety and instance-count bounds over the whole state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ports: BTreeMap<&AgentId, BTreeSet<u16>> = BTreeMap::new();
        for status in self.apps.values() {
            let def = &status.definition;
            if status.instances.len() > def.instances as usize {
                return Err(format!(
                    "app {}: {} instances exceed the desired {}",
                    def.app_id,
                    status.instances.len(),
                    def.instances
                ));
            }
            let hosts: Vec<&Host> = status.instances.iter().map(|i| &i.host).collect();
            if !placement_is_valid(&def.constraints, &hosts) {
                return Err(format!(
                    "app {}: placement violates its constraints",
                    def.app_id
                ));
            }
            for inst in &status.instances {
                for &(_, p) in &inst.ports {
                    if !ports.entry(&inst.host.hostname).or_default().insert(p) {
                        return Err(format!(
                            "host port {p} on {} assigned twice",
                            inst.host.hostname
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum of requests of launched instances.
    pub fn launched_resources(&self) -> ResourceVector {
        self.apps
            .values()
            .map(|s| s.definition.resources.scaled(s.instances.len() as u64))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::OfferId;
    use crate::resources::{AttributeSet, TaskState};

    fn fw() -> ServiceFramework {
        ServiceFramework::new(FrameworkId::new("marathon"), true)
    }

    fn offer_on(agent: &str, cpus: f64, mem: f64) -> Offer {
        Offer {
            offer_id: OfferId(1),
            agent_id: AgentId::new(agent),
            framework_id: FrameworkId::new("marathon"),
            resources: ResourceVector::from_f64(cpus, mem).unwrap(),
            attributes: AttributeSet::new().with("os", "slc6"),
            zone: "a".into(),
            scope: OfferScope::Any,
            issued_at: 0,
            expires_at: 30_000,
        }
    }

    fn es() -> AppDefinition {
        AppDefinition::new("/es", 3, 1.0, 4096.0)
            .unwrap()
            .with_constraint(Constraint::unique("hostname"))
            .with_ports(&[9200])
    }

    fn accepted(resp: OfferResponse) -> Vec<TaskSpec> {
        match resp {
            OfferResponse::Accept(specs) => specs,
            OfferResponse::Decline => Vec::new(),
        }
    }

    fn update(task: &TaskId, state: TaskState) -> TaskRecord {
        TaskRecord {
            task_id: task.clone(),
            framework_id: FrameworkId::new("marathon"),
            agent_id: AgentId::new("?"),
            request: ResourceVector::ZERO,
            container_image: None,
            state,
            started_at: 0,
            ended_at: None,
        }
    }

    /// Places and starts all of `/es` on a1..a3.
    fn running_es() -> (ServiceFramework, Vec<TaskId>) {
        let mut f = fw();
        f.deploy(es(), 0);
        let mut tasks = Vec::new();
        for a in ["a1", "a2", "a3"] {
            let specs = accepted(f.on_offer(&offer_on(a, 4.0, 8192.0), 0));
            assert_eq!(specs.len(), 1);
            tasks.push(specs[0].task_id.clone());
        }
        for t in &tasks {
            f.on_task_update(&update(t, TaskState::Running));
        }
        (f, tasks)
    }

    #[test]
    fn single_placement_leaves_leftover() {
        let mut f = fw();
        f.deploy(AppDefinition::new("/x", 1, 1.0, 4096.0).unwrap(), 0);
        let specs = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 0));
        assert_eq!(specs.len(), 1);
        assert_eq!(
            specs[0].request,
            ResourceVector::from_f64(1.0, 4096.0).unwrap()
        );
        assert_eq!(f.app(&AppId::new("/x")).unwrap().deficit(), 0);
    }

    #[test]
    fn unique_hostname_places_one_per_offer() {
        let mut f = fw();
        f.deploy(
            AppDefinition::new("/u", 2, 1.0, 1024.0)
                .unwrap()
                .with_constraint(Constraint::unique("hostname")),
            0,
        );
        // The constraint oracle forbids a second co-located instance.
        let specs = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 0));
        assert_eq!(specs.len(), 1);
        assert_eq!(f.app(&AppId::new("/u")).unwrap().deficit(), 1);
    }

    #[test]
    fn no_deficit_declines() {
        let mut f = fw();
        assert_eq!(
            f.on_offer(&offer_on("a1", 4.0, 8192.0), 0),
            OfferResponse::Decline
        );
        assert!(!f.wants_offers(&OfferScope::Any));
    }

    #[test]
    fn queue_scoped_offers_are_declined() {
        let mut f = fw();
        f.deploy(AppDefinition::new("/x", 1, 1.0, 1.0).unwrap(), 0);
        let mut o = offer_on("a1", 4.0, 8192.0);
        o.scope = OfferScope::Queue("slc6-pr".into());
        assert_eq!(f.on_offer(&o, 0), OfferResponse::Decline);
        assert!(!f.wants_offers(&o.scope));
        assert!(f.wants_offers(&OfferScope::Services));
    }

    #[test]
    fn oldest_app_first_then_packs_the_rest() {
        let mut f = fw();
        f.deploy(AppDefinition::new("/old", 1, 3.0, 1024.0).unwrap(), 0);
        f.deploy(AppDefinition::new("/new", 2, 1.0, 1024.0).unwrap(), 1);
        let specs = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 2));
        let payloads: Vec<_> = specs.iter().map(|s| s.payload.as_str()).collect();
        assert_eq!(payloads, ["/old", "/new"]);
    }

    #[test]
    fn endpoints_use_lowest_free_host_port() {
        let (f, _) = running_es();
        let eps = f.endpoints();
        let expected: Vec<Endpoint> = ["a1", "a2", "a3"]
            .iter()
            .map(|a| Endpoint {
                app_id: AppId::new("/es"),
                hostname: AgentId::new(*a),
                host_port: HOST_PORT_BASE,
            })
            .collect();
        assert_eq!(eps, expected);
    }

    #[test]
    fn ports_are_recycled_lowest_first() {
        let mut f = fw();
        f.deploy(
            AppDefinition::new("/w", 3, 1.0, 1.0)
                .unwrap()
                .with_ports(&[80]),
            0,
        );
        let specs = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 0));
        assert_eq!(specs.len(), 3);
        let ports: Vec<u16> = f
            .app(&AppId::new("/w"))
            .unwrap()
            .instances
            .iter()
            .map(|i| i.ports[0].1)
            .collect();
        assert_eq!(ports, [31000, 31001, 31002]);
        f.on_task_update(&update(&specs[0].task_id, TaskState::Failed));
        let again = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 1));
        assert_eq!(again.len(), 1);
        let last = f
            .app(&AppId::new("/w"))
            .unwrap()
            .instances
            .last()
            .unwrap()
            .ports[0]
            .1;
        assert_eq!(last, 31000);
    }

    #[test]
    fn no_apps_no_endpoints_and_suspended_apps_vanish() {
        assert!(fw().endpoints().is_empty());
        let (mut f, tasks) = running_es();
        let change = f.scale(&AppId::new("/es"), 0, 10).unwrap();
        assert_eq!(change.kills.len(), 3);
        // newest first
        assert_eq!(
            change.kills,
            tasks.iter().rev().cloned().collect::<Vec<_>>()
        );
        assert!(f.endpoints().is_empty());
    }

    #[test]
    fn terminal_updates_widen_the_deficit() {
        let (mut f, tasks) = running_es();
        let id = AppId::new("/es");
        f.on_task_update(&update(&tasks[1], TaskState::Failed));
        assert_eq!(f.app(&id).unwrap().deficit(), 1);
        assert_eq!(f.app(&id).unwrap().instances.len(), 2);
        f.on_task_update(&update(&tasks[0], TaskState::Lost));
        f.on_task_update(&update(&tasks[2], TaskState::Lost));
        assert_eq!(f.app(&id).unwrap().deficit(), 3);
    }

    #[test]
    fn suspended_app_keeps_zero_deficit() {
        let mut f = fw();
        f.deploy(AppDefinition::new("/x", 0, 1.0, 1.0).unwrap(), 0);
        f.on_task_update(&update(&TaskId::new("/x#99"), TaskState::Failed));
        assert_eq!(f.app(&AppId::new("/x")).unwrap().deficit(), 0);
    }

    #[test]
    fn scale_up_and_same_size() {
        let (mut f, _) = running_es();
        let id = AppId::new("/es");
        let change = f.scale(&id, 5, 1).unwrap();
        assert!(change.kills.is_empty());
        assert_eq!(f.app(&id).unwrap().deficit(), 2);

        let (mut f, tasks) = running_es();
        let before: Vec<TaskId> = f
            .app(&id)
            .unwrap()
            .instances
            .iter()
            .map(|i| i.task_id.clone())
            .collect();
        let change = f.scale(&id, 3, 1).unwrap();
        assert!(change.kills.is_empty());
        assert_eq!(change.version, 2);
        assert_eq!(f.history(&id).unwrap().len(), 2);
        let after: Vec<TaskId> = f
            .app(&id)
            .unwrap()
            .instances
            .iter()
            .map(|i| i.task_id.clone())
            .collect();
        assert_eq!(before, after);
        assert_eq!(before, tasks);
    }

    #[test]
    fn scale_unknown_app() {
        assert_eq!(
            fw().scale(&AppId::new("/nope"), 1, 0),
            Err(ServiceError::UnknownApp(AppId::new("/nope")))
        );
    }

    #[test]
    fn deploy_deploy_rollback() {
        let mut f = fw();
        let id = AppId::new("/es");
        let v1 = es();
        let mut v2 = es();
        v2.resources = ResourceVector::from_f64(1.0, 8192.0).unwrap();
        assert_eq!(f.deploy(v1.clone(), 0).version, 1);
        assert_eq!(f.deploy(v2, 1).version, 2);
        let change = f.rollback(&id, 1, 2).unwrap();
        assert_eq!(change.version, 3);
        assert_eq!(f.history(&id).unwrap().len(), 3);
        assert_eq!(f.app(&id).unwrap().definition, v1);
        assert!(matches!(
            f.rollback(&id, 9, 3),
            Err(ServiceError::UnknownVersion { .. })
        ));
    }

    #[test]
    fn rollback_of_rollback_round_trips() {
        let mut f = fw();
        let id = AppId::new("/es");
        f.deploy(es(), 0);
        let mut v2 = es();
        v2.instances = 1;
        f.deploy(v2.clone(), 1);
        let v3 = f.rollback(&id, 1, 2).unwrap().version;
        f.rollback(&id, v3, 3).unwrap();
        assert_eq!(f.app(&id).unwrap().definition, es());
        let versions: Vec<u64> = f.history(&id).unwrap().iter().map(|r| r.version).collect();
        assert_eq!(versions, [1, 2, 3, 4]);
    }

    #[test]
    fn redeploy_kills_every_instance() {
        let (mut f, tasks) = running_es();
        let mut bigger = es();
        bigger.resources = ResourceVector::from_f64(1.0, 8192.0).unwrap();
        let change = f.deploy(bigger, 5);
        assert_eq!(change.kills, tasks);
        assert_eq!(f.app(&AppId::new("/es")).unwrap().deficit(), 3);
        let mut placed = 0;
        for a in ["b1", "b2", "b3"] {
            placed += accepted(f.on_offer(&offer_on(a, 4.0, 8192.0), 6)).len();
        }
        assert_eq!(placed, 3);
    }

    #[test]
    fn health_checks_kill_hung_instances_at_threshold() {
        let mut f = fw();
        let mut app = AppDefinition::new("/h", 1, 1.0, 1.0).unwrap();
        app.health_check = Some(HealthCheck {
            interval: 10_000,
            threshold: 3,
        });
        f.deploy(app, 0);
        let t = accepted(f.on_offer(&offer_on("a1", 4.0, 8192.0), 0))
            .remove(0)
            .task_id;
        f.on_task_update(&update(&t, TaskState::Running));
        assert!(f.mark_hung(&t));
        assert!(f.health_checks(5_000).is_empty());
        assert!(f.health_checks(10_000).is_empty());
        assert!(f.health_checks(20_000).is_empty());
        assert_eq!(f.health_checks(30_000), vec![t]);
        assert_eq!(f.app(&AppId::new("/h")).unwrap().deficit(), 1);
    }

    #[test]
    fn isolation_off_pins_images_to_host_os() {
        let mut f = ServiceFramework::new(FrameworkId::new("marathon"), false);
        let mut app = AppDefinition::new("/old", 1, 1.0, 1.0).unwrap();
        app.container_image = Some("slc5".into());
        f.deploy(app, 0);
        assert_eq!(
            f.on_offer(&offer_on("a1", 4.0, 8192.0), 0),
            OfferResponse::Decline
        );
    }

    #[test]
    fn invariants_hold_after_churn() {
        let (mut f, tasks) = running_es();
        f.check_invariants().unwrap();
        f.on_task_update(&update(&tasks[0], TaskState::Killed));
        // The replacement may not land on a host that already runs /es.
        assert_eq!(
            f.on_offer(&offer_on("a2", 4.0, 8192.0), 1),
            OfferResponse::Decline
        );
        assert_eq!(
            accepted(f.on_offer(&offer_on("a4", 4.0, 8192.0), 1)).len(),
            1
        );
        f.check_invariants().unwrap();
    }
}
