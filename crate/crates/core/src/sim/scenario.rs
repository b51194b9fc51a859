//! Scenario documents: the cluster, its workload, failure injections and
//! the allocation policy to run them under.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::{JobKind, QueueConfig};
use crate::discovery::DEFAULT_CRON_PERIOD;
use crate::ids::{AgentId, AppId, MasterId};
use crate::master::{MasterGroup, MasterInfo, DEFAULT_OFFER_TTL};
use crate::resources::{AgentSpec, AttributeSet, Quantity, ResourceVector, SimTime};
use crate::service::AppDefinition;

pub const DEFAULT_ROUND_INTERVAL: SimTime = 5_000;
pub const MS_PER_DAY: f64 = 86_400_000.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Dynamic,
    Static,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Dynamic => "dynamic",
            Policy::Static => "static",
        }
    }
}

/// What a static pool's agents may be offered to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolBinding {
    Services,
    Queue(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool {
    pub name: String,
    pub agents: Vec<AgentId>,
    pub bind: PoolBinding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct WorkloadEntry {
    pub kind: JobKind,
    pub label: String,
    /// Work content of one job.
    pub duration: SimTime,
    /// Durations are drawn uniformly from `duration × (1 ± jitter)`.
    #[serde(default, skip_serializing_if = "is_zero_f64")]
    pub duration_jitter: f64,
    /// Poisson arrivals at this mean rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_day: Option<f64>,
    /// Explicit submission times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<Vec<SimTime>>,
}

fn is_zero_f64(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    AgentCrash,
    AgentRecover,
    MasterCrash,
    MasterRecover,
    /// Target is an app id (one instance fails) or a queue label (one busy
    /// builder fails).
    TaskFail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub at: SimTime,
    pub kind: FailureKind,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperationKind {
    Deploy { app: AppDefinition },
    Scale { app: AppId, instances: u32 },
    Rollback { app: AppId, version: u64 },
}

/// A timed operator action against the service framework.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub at: SimTime,
    #[serde(flatten)]
    pub kind: OperationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawAgent {
    id: AgentId,
    cpus: f64,
    mem: f64,
    #[serde(default, skip_serializing_if = "is_zero_f64")]
    disk: f64,
    zone: String,
    #[serde(default)]
    attributes: AttributeSet,
}

impl TryFrom<RawAgent> for AgentSpec {
    type Error = String;

    fn try_from(raw: RawAgent) -> Result<Self, String> {
        let disk = Quantity::from_f64(raw.disk).map_err(|e| e.to_string())?;
        let total = ResourceVector::from_f64(raw.cpus, raw.mem)
            .map_err(|e| e.to_string())?
            .with_disk(disk);
        AgentSpec::new(raw.id, total, raw.attributes, raw.zone).map_err(|e| e.to_string())
    }
}

impl From<AgentSpec> for RawAgent {
    fn from(a: AgentSpec) -> Self {
        RawAgent {
            id: a.agent_id,
            cpus: a.total.cpus.as_f64(),
            mem: a.total.mem.as_f64(),
            disk: a.total.disk.as_f64(),
            zone: a.zone,
            attributes: a.attributes,
        }
    }
}

mod agent_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(agents: &[AgentSpec], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<RawAgent> = agents.iter().cloned().map(RawAgent::from).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<AgentSpec>, D::Error> {
        Vec::<RawAgent>::deserialize(d)?
            .into_iter()
            .map(|r| AgentSpec::try_from(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masters: Vec<MasterInfo>,
    #[serde(with = "agent_list")]
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_map: Option<Vec<Pool>>,
    #[serde(default)]
    pub queues: Vec<QueueConfig>,
    #[serde(default)]
    pub apps: Vec<AppDefinition>,
    #[serde(default)]
    pub workload: Vec<WorkloadEntry>,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operations: Vec<Operation>,
    /// Whether tasks run in containers isolated from the host OS.
    #[serde(default = "yes")]
    pub container_isolation: bool,
    #[serde(default = "default_round_interval")]
    pub round_interval: SimTime,
    #[serde(default = "default_offer_ttl")]
    pub offer_ttl: SimTime,
    #[serde(default = "default_cron_period")]
    pub cron_period: SimTime,
    /// Delay between an offer's issue and its arrival at the framework.
    #[serde(default)]
    pub framework_latency: SimTime,
    /// Delay between a task's acceptance and it reaching Running.
    #[serde(default)]
    pub launch_delay: SimTime,
}

fn yes() -> bool {
    true
}

fn default_round_interval() -> SimTime {
    DEFAULT_ROUND_INTERVAL
}

fn default_offer_ttl() -> SimTime {
    DEFAULT_OFFER_TTL
}

fn default_cron_period() -> SimTime {
    DEFAULT_CRON_PERIOD
}

impl Scenario {
    /// An empty scenario over the given agents: no queues, apps, workload or
    /// failures, default timings.
    pub fn new(name: &str, seed: u64, duration: SimTime, agents: Vec<AgentSpec>) -> Self {
        Scenario {
            name: name.to_owned(),
            seed,
            duration,
            policy: Policy::Dynamic,
            masters: Vec::new(),
            agents,
            static_map: None,
            queues: Vec::new(),
            apps: Vec::new(),
            workload: Vec::new(),
            failures: Vec::new(),
            operations: Vec::new(),
            container_isolation: true,
            round_interval: DEFAULT_ROUND_INTERVAL,
            offer_ttl: DEFAULT_OFFER_TTL,
            cron_period: DEFAULT_CRON_PERIOD,
            framework_latency: 0,
            launch_delay: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    /// The configured master group, or the standard three-zone group.
    pub fn master_group(&self) -> Result<MasterGroup, ScenarioError> {
        if self.masters.is_empty() {
            return Ok(MasterGroup::standard());
        }
        MasterGroup::new(self.masters.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn queue(&self, label: &str) -> Option<&QueueConfig> {
        self.queues.iter().find(|q| q.label == label)
    }

    /// Distinct build-framework names, sorted.
    pub fn build_frameworks(&self) -> BTreeSet<&str> {
        self.queues.iter().map(|q| q.framework.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return invalid("name is empty");
        }
        if self.duration == 0 {
            return invalid("duration must be positive");
        }
        if self.round_interval == 0 || self.offer_ttl == 0 || self.cron_period == 0 {
            return invalid("roundInterval, offerTtl and cronPeriod must be positive");
        }
        if self.agents.is_empty() {
            return invalid("no agents");
        }
        let mut agents = BTreeSet::new();
        for a in &self.agents {
            if !agents.insert(&a.agent_id) {
                return invalid(format!("agent {} is listed twice", a.agent_id));
            }
        }
        let group = self.master_group()?;

        let mut labels = BTreeSet::new();
        for q in &self.queues {
            if !labels.insert(q.label.as_str()) {
                return invalid(format!("queue {} is listed twice", q.label));
            }
            if q.framework == super::SERVICE_FRAMEWORK {
                return invalid(format!(
                    "queue {} uses the reserved framework name",
                    q.label
                ));
            }
        }

        let mut apps: BTreeSet<&AppId> = BTreeSet::new();
        for app in &self.apps {
            if !apps.insert(&app.app_id) {
                return invalid(format!("app {} is listed twice", app.app_id));
            }
        }
        let mut ops: Vec<&Operation> = self.operations.iter().collect();
        ops.sort_by_key(|o| o.at);
        for op in ops {
            if op.at > self.duration {
                return invalid(format!("operation at {} is after the end", op.at));
            }
            match &op.kind {
                OperationKind::Deploy { app } => {
                    apps.insert(&app.app_id);
                }
                OperationKind::Scale { app, .. } | OperationKind::Rollback { app, .. } => {
                    if !apps.contains(app) {
                        return invalid(format!("operation targets unknown app {app}"));
                    }
                }
            }
        }

        for (i, w) in self.workload.iter().enumerate() {
            if !labels.contains(w.label.as_str()) {
                return invalid(format!("workload {i} names unknown queue {}", w.label));
            }
            if w.duration == 0 {
                return invalid(format!("workload {i} has zero duration"));
            }
            if !(0.0..1.0).contains(&w.duration_jitter) {
                return invalid(format!("workload {i}: durationJitter must be in [0, 1)"));
            }
            match (&w.rate_per_day, &w.timeline) {
                (Some(rate), None) => {
                    if !rate.is_finite() || *rate < 0.0 {
                        return invalid(format!("workload {i}: ratePerDay must be non-negative"));
                    }
                }
                (None, Some(times)) => {
                    if let Some(t) = times.iter().find(|&&t| t > self.duration) {
                        return invalid(format!("workload {i}: arrival {t} is after the end"));
                    }
                }
                _ => {
                    return invalid(format!(
                        "workload {i} needs exactly one of ratePerDay and timeline"
                    ))
                }
            }
        }

        for f in &self.failures {
            if f.at > self.duration {
                return invalid(format!("failure at {} is after the end", f.at));
            }
            let known = match f.kind {
                FailureKind::AgentCrash | FailureKind::AgentRecover => {
                    agents.contains(&AgentId::new(f.target.as_str()))
                }
                FailureKind::MasterCrash | FailureKind::MasterRecover => {
                    group.contains(&MasterId::new(f.target.as_str()))
                }
                FailureKind::TaskFail => {
                    apps.contains(&AppId::new(f.target.as_str()))
                        || labels.contains(f.target.as_str())
                }
            };
            if !known {
                return invalid(format!("{:?} targets unknown {}", f.kind, f.target));
            }
        }

        match (&self.static_map, self.policy) {
            (None, Policy::Static) => return invalid("static policy needs a staticMap"),
            (Some(pools), _) => self.validate_pools(pools, &agents, &labels)?,
            _ => {}
        }
        Ok(())
    }

    fn validate_pools(
        &self,
        pools: &[Pool],
        agents: &BTreeSet<&AgentId>,
        labels: &BTreeSet<&str>,
    ) -> Result<(), ScenarioError> {
        let mut names = BTreeSet::new();
        let mut owner: BTreeMap<&AgentId, &str> = BTreeMap::new();
        for pool in pools {
            if !names.insert(pool.name.as_str()) {
                return invalid(format!("pool {} is listed twice", pool.name));
            }
            if let PoolBinding::Queue(label) = &pool.bind {
                if !labels.contains(label.as_str()) {
                    return invalid(format!("pool {} binds unknown queue {label}", pool.name));
                }
            }
            for a in &pool.agents {
                if !agents.contains(a) {
                    return invalid(format!("pool {} lists unknown agent {a}", pool.name));
                }
                if let Some(other) = owner.insert(a, &pool.name) {
                    return invalid(format!("agent {a} is in pools {other} and {}", pool.name));
                }
            }
        }
        if let Some(a) = agents.iter().find(|a| !owner.contains_key(*a)) {
            return invalid(format!("agent {a} is in no pool"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "name": "t",
            "seed": 1,
            "duration": 1000000,
            "policy": "dynamic",
            "agents": [
                {"id": "a1", "cpus": 4, "mem": 8192, "zone": "a", "attributes": {"os": "slc6"}},
                {"id": "a2", "cpus": 4, "mem": 8192, "zone": "b"}
            ],
            "queues": [{"label": "pr", "cpus": 2, "mem": 4096, "maxBuilders": 4}],
            "workload": [{"kind": "pr-test", "label": "pr", "duration": 1000, "ratePerDay": 10}]
        })
    }

    fn parse(v: serde_json::Value) -> Result<Scenario, ScenarioError> {
        Scenario::from_json(&v.to_string())
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = parse(minimal()).unwrap();
        assert_eq!(s.round_interval, 5_000);
        assert_eq!(s.cron_period, 120_000);
        assert_eq!(s.offer_ttl, 30_000);
        assert!(s.container_isolation);
        assert_eq!(s.master_group().unwrap().masters().len(), 3);
        assert_eq!(s.agents[0].attributes.get("os"), Some("slc6"));
    }

    #[test]
    fn json_round_trip() {
        let mut v = minimal();
        v["failures"] = serde_json::json!([{"at": 5, "kind": "agent-crash", "target": "a1"}]);
        v["operations"] = serde_json::json!([
            {"at": 1, "op": "deploy", "app": {"id": "/web", "instances": 1}},
            {"at": 2, "op": "scale", "app": "/web", "instances": 2}
        ]);
        let s = parse(v).unwrap();
        assert_eq!(
            parse(serde_json::from_str(&s.to_json()).unwrap()).unwrap(),
            s
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal();
        v["colour"] = "red".into();
        assert!(matches!(parse(v), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn static_policy_requires_a_map() {
        let mut v = minimal();
        v["policy"] = "static".into();
        assert!(matches!(parse(v), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn pools_must_partition_the_agents() {
        let mut v = minimal();
        v["staticMap"] =
            serde_json::json!([{"name": "p", "agents": ["a1"], "bind": {"queue": "pr"}}]);
        assert!(parse(v.clone()).is_err(), "a2 uncovered");
        v["staticMap"] = serde_json::json!([
            {"name": "p", "agents": ["a1", "a2"], "bind": {"queue": "pr"}},
            {"name": "s", "agents": ["a2"], "bind": "services"}
        ]);
        assert!(parse(v.clone()).is_err(), "a2 twice");
        v["staticMap"] = serde_json::json!([
            {"name": "p", "agents": ["a1"], "bind": {"queue": "pr"}},
            {"name": "s", "agents": ["a2"], "bind": "services"}
        ]);
        parse(v.clone()).unwrap();
        v["staticMap"][0]["bind"] = serde_json::json!({"queue": "nope"});
        assert!(parse(v).is_err());
    }

    #[test]
    fn failure_targets_must_exist() {
        let mut v = minimal();
        v["failures"] = serde_json::json!([{"at": 5, "kind": "master-crash", "target": "m9"}]);
        assert!(parse(v.clone()).is_err());
        v["failures"] = serde_json::json!([{"at": 5, "kind": "master-crash", "target": "m2"}]);
        parse(v.clone()).unwrap();
        v["failures"] = serde_json::json!([{"at": 5, "kind": "task-fail", "target": "pr"}]);
        parse(v.clone()).unwrap();
        v["failures"] = serde_json::json!([{"at": 5, "kind": "task-fail", "target": "/ghost"}]);
        assert!(parse(v).is_err());
    }

    #[test]
    fn workload_needs_exactly_one_arrival_process() {
        let mut v = minimal();
        v["workload"][0]["timeline"] = serde_json::json!([1, 2]);
        assert!(parse(v.clone()).is_err());
        v["workload"][0]
            .as_object_mut()
            .unwrap()
            .remove("ratePerDay");
        parse(v.clone()).unwrap();
        v["workload"][0]["label"] = "slc7".into();
        assert!(parse(v).is_err());
    }

    #[test]
    fn duplicate_agents_and_bad_shapes() {
        let mut v = minimal();
        v["agents"][1]["id"] = "a1".into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["agents"][1]["cpus"] = 0.into();
        assert!(parse(v).is_err());
        let mut v = minimal();
        v["queues"][0]["framework"] = super::super::SERVICE_FRAMEWORK.into();
        assert!(parse(v).is_err());
    }
}
