//! Resource arithmetic, agent descriptions and task records.
//!
//! Quantities are fixed-point: every component is stored in thousandths of
//! its unit (millicores for cpus, thousandths of a MiB for mem and disk), so
//! conservation checks never see floating-point drift.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::{AgentId, FrameworkId, TaskId};

/// Simulation time in integer milliseconds.
pub type SimTime = u64;

/// Fixed-point scale: thousandths of a unit.
pub const SCALE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResourceError {
    #[error("resource underflow: {minuend} - {subtrahend} goes negative")]
    Underflow {
        minuend: ResourceVector,
        subtrahend: ResourceVector,
    },
    #[error("invalid quantity {0}: must be finite and non-negative")]
    InvalidQuantity(f64),
    #[error("attribute {0:?} has an empty value")]
    EmptyAttribute(String),
    #[error("agent {0} must have cpus > 0 and mem > 0")]
    EmptyAgent(AgentId),
}

/// A non-negative fixed-point quantity in thousandths of a unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quantity(u64);

impl Quantity {
    pub const ZERO: Quantity = Quantity(0);

    pub const fn from_milli(milli: u64) -> Self {
        Quantity(milli)
    }

    pub const fn from_units(units: u64) -> Self {
        Quantity(units * SCALE)
    }

    /// Rounds to the nearest thousandth.
    pub fn from_f64(value: f64) -> Result<Self, ResourceError> {
        if !value.is_finite() || value < 0.0 {
            return Err(ResourceError::InvalidQuantity(value));
        }
        Ok(Quantity((value * SCALE as f64).round() as u64))
    }

    pub const fn milli(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, other: Quantity) -> Option<Quantity> {
        self.0.checked_sub(other.0).map(Quantity)
    }
}

fn is_zero_ref(q: &Quantity) -> bool {
    q.is_zero()
}

impl Add for Quantity {
    type Output = Quantity;

    fn add(self, rhs: Quantity) -> Quantity {
        Quantity(self.0 + rhs.0)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Quantity::from_f64(value).map_err(serde::de::Error::custom)
    }
}

/// cpus / mem / disk triple used for offers, requests and accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceVector {
    pub cpus: Quantity,
    pub mem: Quantity,
    #[serde(default, skip_serializing_if = "is_zero_ref")]
    pub disk: Quantity,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpus: Quantity::ZERO,
        mem: Quantity::ZERO,
        disk: Quantity::ZERO,
    };

    pub const fn new(cpus: Quantity, mem: Quantity) -> Self {
        ResourceVector {
            cpus,
            mem,
            disk: Quantity::ZERO,
        }
    }

    /// `cpus` in cores and `mem` in MiB, rounded to thousandths.
    pub fn from_f64(cpus: f64, mem: f64) -> Result<Self, ResourceError> {
        Ok(ResourceVector::new(
            Quantity::from_f64(cpus)?,
            Quantity::from_f64(mem)?,
        ))
    }

    pub fn with_disk(mut self, disk: Quantity) -> Self {
        self.disk = disk;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.cpus.is_zero() && self.mem.is_zero() && self.disk.is_zero()
    }

    /// True iff every component of `self` is at least `other`'s.
    pub fn contains(&self, other: &ResourceVector) -> bool {
        self.cpus >= other.cpus && self.mem >= other.mem && self.disk >= other.disk
    }

    /// Component-wise difference. Going negative is an accounting bug, never clamped.
    pub fn checked_sub(&self, other: &ResourceVector) -> Result<ResourceVector, ResourceError> {
        let underflow = || ResourceError::Underflow {
            minuend: *self,
            subtrahend: *other,
        };
        Ok(ResourceVector {
            cpus: self.cpus.checked_sub(other.cpus).ok_or_else(underflow)?,
            mem: self.mem.checked_sub(other.mem).ok_or_else(underflow)?,
            disk: self.disk.checked_sub(other.disk).ok_or_else(underflow)?,
        })
    }

    /// How many copies of `unit` fit into `self`. Zero-sized units fit zero times.
    pub fn fit_count(&self, unit: &ResourceVector) -> u64 {
        if unit.is_zero() {
            return 0;
        }
        [
            (self.cpus, unit.cpus),
            (self.mem, unit.mem),
            (self.disk, unit.disk),
        ]
        .iter()
        .filter(|(_, u)| !u.is_zero())
        .map(|(have, u)| have.milli() / u.milli())
        .min()
        .unwrap_or(0)
    }

    pub fn scaled(&self, n: u64) -> ResourceVector {
        ResourceVector {
            cpus: Quantity::from_milli(self.cpus.milli() * n),
            mem: Quantity::from_milli(self.mem.milli() * n),
            disk: Quantity::from_milli(self.disk.milli() * n),
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector {
            cpus: self.cpus + rhs.cpus,
            mem: self.mem + rhs.mem,
            disk: self.disk + rhs.disk,
        }
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, |acc, r| acc + r)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(cpus {}, mem {}", self.cpus, self.mem)?;
        if !self.disk.is_zero() {
            write!(f, ", disk {}", self.disk)?;
        }
        f.write_str(")")
    }
}

/// Named string labels on an agent: `os`, `datanode`, `zone`, ...
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, String>",
    into = "BTreeMap<String, String>"
)]
pub struct AttributeSet(BTreeMap<String, String>);

impl AttributeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: &str) -> Self {
        self.insert(name, value).expect("non-empty attribute value");
        self
    }

    pub fn insert(&mut self, name: &str, value: &str) -> Result<(), ResourceError> {
        if value.is_empty() {
            return Err(ResourceError::EmptyAttribute(name.to_owned()));
        }
        self.0.insert(name.to_owned(), value.to_owned());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every required pair must be present with an equal value.
    pub fn satisfies(&self, required: &BTreeMap<String, String>) -> bool {
        required
            .iter()
            .all(|(k, v)| self.get(k) == Some(v.as_str()))
    }
}

impl TryFrom<BTreeMap<String, String>> for AttributeSet {
    type Error = ResourceError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        if let Some((k, _)) = map.iter().find(|(_, v)| v.is_empty()) {
            return Err(ResourceError::EmptyAttribute(k.clone()));
        }
        Ok(AttributeSet(map))
    }
}

impl From<AttributeSet> for BTreeMap<String, String> {
    fn from(attrs: AttributeSet) -> Self {
        attrs.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: AgentId,
    pub total: ResourceVector,
    pub attributes: AttributeSet,
    pub zone: String,
}

impl AgentSpec {
    pub fn new(
        agent_id: AgentId,
        total: ResourceVector,
        attributes: AttributeSet,
        zone: impl Into<String>,
    ) -> Result<Self, ResourceError> {
        if total.cpus.is_zero() || total.mem.is_zero() {
            return Err(ResourceError::EmptyAgent(agent_id));
        }
        Ok(AgentSpec {
            agent_id,
            total,
            attributes,
            zone: zone.into(),
        })
    }

    pub fn hostname(&self) -> &str {
        self.agent_id.as_str()
    }

    pub fn host(&self) -> Host {
        Host {
            hostname: self.agent_id.clone(),
            zone: self.zone.clone(),
            attributes: self.attributes.clone(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        resolve_field(&self.agent_id, &self.zone, &self.attributes, name)
    }
}

/// The placement-relevant view of an agent, as carried by offers and
/// remembered by frameworks for the instances they placed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Host {
    pub hostname: AgentId,
    pub zone: String,
    pub attributes: AttributeSet,
}

impl Host {
    pub fn field(&self, name: &str) -> Option<&str> {
        resolve_field(&self.hostname, &self.zone, &self.attributes, name)
    }
}

/// Whether a task carrying `image` may run on `host`. Containers isolate the
/// task from the host OS; without isolation the image label names the OS the
/// task needs, matched against the host's `os` attribute.
pub fn image_runs_on(image: Option<&str>, host: &Host, isolation: bool) -> bool {
    match image {
        None => true,
        Some(_) if isolation => true,
        Some(os) => host.attributes.get("os") == Some(os),
    }
}

/// `hostname` is reserved; otherwise attributes win, and `zone` falls back
/// to the agent's availability zone.
fn resolve_field<'a>(
    hostname: &'a AgentId,
    zone: &'a str,
    attributes: &'a AttributeSet,
    name: &str,
) -> Option<&'a str> {
    if name == "hostname" {
        return Some(hostname.as_str());
    }
    attributes
        .get(name)
        .or_else(|| (name == "zone").then_some(zone))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentState {
    pub spec: AgentSpec,
    pub allocated: ResourceVector,
    pub offered: ResourceVector,
    pub running_tasks: BTreeSet<TaskId>,
    pub alive: bool,
}

impl AgentState {
    pub fn new(spec: AgentSpec) -> Self {
        AgentState {
            spec,
            allocated: ResourceVector::ZERO,
            offered: ResourceVector::ZERO,
            running_tasks: BTreeSet::new(),
            alive: true,
        }
    }

    /// total − allocated − offered.
    pub fn free(&self) -> Result<ResourceVector, ResourceError> {
        self.spec
            .total
            .checked_sub(&self.allocated)?
            .checked_sub(&self.offered)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Staging,
    Running,
    Finished,
    Failed,
    Killed,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskEvent {
    Launched,
    Completed,
    Failed,
    Kill,
    AgentLost,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal task transition: {event:?} from {from:?}")]
pub struct IllegalTransition {
    pub from: TaskState,
    pub event: TaskEvent,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskState::Finished | TaskState::Failed | TaskState::Killed | TaskState::Lost
        )
    }

    /// Staging → Running → {Finished, Failed, Killed}; any live state → Lost.
    /// A staging task may also be killed or fail before it ever runs.
    pub fn apply(self, event: TaskEvent) -> Result<TaskState, IllegalTransition> {
        use TaskEvent as E;
        use TaskState as S;
        match (self, event) {
            (S::Staging, E::Launched) => Ok(S::Running),
            (S::Running, E::Completed) => Ok(S::Finished),
            (S::Staging | S::Running, E::Failed) => Ok(S::Failed),
            (S::Staging | S::Running, E::Kill) => Ok(S::Killed),
            (S::Staging | S::Running, E::AgentLost) => Ok(S::Lost),
            (from, event) => Err(IllegalTransition { from, event }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub framework_id: FrameworkId,
    pub agent_id: AgentId,
    pub request: ResourceVector,
    pub container_image: Option<String>,
    pub state: TaskState,
    pub started_at: SimTime,
    pub ended_at: Option<SimTime>,
}
