//! JSON app definitions.
//!
//! ```json
//! {"id": "/es", "instances": 3, "cpus": 1, "mem": 4096,
//!  "container": "elasticsearch", "ports": [9200],
//!  "volumes": [{"hostPath": "/data/es", "containerPath": "/usr/share/es/data"}],
//!  "constraints": [["hostname", "UNIQUE"], ["datanode", "CLUSTER", "es"]],
//!  "healthCheck": {"interval": 10000, "threshold": 3}}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AppId;
use crate::resources::{Quantity, ResourceVector, SimTime};

use super::constraints::Pattern;

pub const DEFAULT_CPUS: f64 = 1.0;
pub const DEFAULT_MEM: f64 = 128.0;
pub const DEFAULT_HEALTH_INTERVAL: SimTime = 10_000;
pub const DEFAULT_HEALTH_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppError {
    #[error("malformed app definition: {0}")]
    Parse(String),
    #[error("invalid app definition: {0}")]
    Validation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "UNIQUE")]
    Unique,
    #[serde(rename = "CLUSTER")]
    Cluster,
    #[serde(rename = "LIKE")]
    Like,
}

/// A placement rule over an agent attribute or the reserved `hostname` field.
/// Serialized in the `[field, operator, value?]` triple form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Constraint {
    pub field: String,
    pub operator: Operator,
    pub value: Option<String>,
}

impl Constraint {
    pub fn unique(field: &str) -> Self {
        Constraint {
            field: field.to_owned(),
            operator: Operator::Unique,
            value: None,
        }
    }

    pub fn cluster(field: &str, value: &str) -> Self {
        Constraint {
            field: field.to_owned(),
            operator: Operator::Cluster,
            value: Some(value.to_owned()),
        }
    }

    pub fn like(field: &str, pattern: &str) -> Self {
        Constraint {
            field: field.to_owned(),
            operator: Operator::Like,
            value: Some(pattern.to_owned()),
        }
    }
}

impl TryFrom<Vec<String>> for Constraint {
    type Error = AppError;

    fn try_from(parts: Vec<String>) -> Result<Self, AppError> {
        let bad = |msg: &str| AppError::Validation(format!("constraint {parts:?}: {msg}"));
        let (field, op, value) = match parts.as_slice() {
            [f, op] => (f, op, None),
            [f, op, v] => (f, op, Some(v.clone())),
            _ => {
                return Err(bad(
                    "expected [field, operator] or [field, operator, value]",
                ))
            }
        };
        if field.is_empty() {
            return Err(bad("empty field"));
        }
        let operator = match op.as_str() {
            "UNIQUE" => Operator::Unique,
            "CLUSTER" => Operator::Cluster,
            "LIKE" => Operator::Like,
            _ => return Err(bad("unknown operator")),
        };
        match (operator, &value) {
            (Operator::Unique, Some(_)) => return Err(bad("UNIQUE takes no value")),
            (Operator::Cluster | Operator::Like, None) => {
                return Err(bad("operator requires a value"))
            }
            (Operator::Like, Some(p)) => {
                Pattern::parse(p).map_err(|e| bad(&e))?;
            }
            _ => {}
        }
        Ok(Constraint {
            field: field.clone(),
            operator,
            value,
        })
    }
}

impl From<Constraint> for Vec<String> {
    fn from(c: Constraint) -> Self {
        let op = match c.operator {
            Operator::Unique => "UNIQUE",
            Operator::Cluster => "CLUSTER",
            Operator::Like => "LIKE",
        };
        let mut v = vec![c.field, op.to_owned()];
        v.extend(c.value);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Volume {
    pub host_path: String,
    pub container_path: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthCheck {
    #[serde(default = "default_interval")]
    pub interval: SimTime,
    #[serde(default = "default_threshold")]
    pub threshold: u32,
}

fn default_interval() -> SimTime {
    DEFAULT_HEALTH_INTERVAL
}

fn default_threshold() -> u32 {
    DEFAULT_HEALTH_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawApp", into = "RawApp")]
pub struct AppDefinition {
    pub app_id: AppId,
    pub instances: u32,
    /// Per-instance request.
    pub resources: ResourceVector,
    pub container_image: Option<String>,
    pub ports: Vec<u16>,
    /// Carried for completeness; volumes have no simulated effect.
    pub volumes: Vec<Volume>,
    pub constraints: Vec<Constraint>,
    pub health_check: Option<HealthCheck>,
}

impl AppDefinition {
    pub fn new(app_id: &str, instances: u32, cpus: f64, mem: f64) -> Result<Self, AppError> {
        RawApp {
            id: Some(app_id.to_owned()),
            instances: Some(instances as i64),
            cpus: Some(cpus),
            mem: Some(mem),
            ..RawApp::default()
        }
        .try_into()
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_ports(mut self, ports: &[u16]) -> Self {
        self.ports = ports.to_vec();
        self
    }
}

/// Parses and validates a JSON app definition.
pub fn parse_app_definition(text: &str) -> Result<AppDefinition, AppError> {
    let raw: RawApp = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            AppError::Validation(e.to_string())
        } else {
            AppError::Parse(e.to_string())
        }
    })?;
    raw.try_into()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawApp {
    id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    instances: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cpus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mem: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    container: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ports: Vec<u16>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    volumes: Vec<Volume>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    constraints: Vec<Constraint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    health_check: Option<HealthCheck>,
}

impl TryFrom<RawApp> for AppDefinition {
    type Error = AppError;

    fn try_from(raw: RawApp) -> Result<Self, AppError> {
        let invalid = |m: String| AppError::Validation(m);
        let id = raw.id.ok_or_else(|| invalid("missing id".into()))?;
        if !id.starts_with('/') || id.len() < 2 || id.contains("//") || id.ends_with('/') {
            return Err(invalid(format!("id {id:?} is not a path like /name")));
        }
        let instances = raw.instances.unwrap_or(1);
        if instances < 0 {
            return Err(invalid(format!(
                "{id}: negative instance count {instances}"
            )));
        }
        let instances =
            u32::try_from(instances).map_err(|_| invalid(format!("{id}: too many instances")))?;
        let quantity = |name: &str, v: f64| {
            Quantity::from_f64(v).map_err(|e| invalid(format!("{id}: {name}: {e}")))
        };
        let cpus = quantity("cpus", raw.cpus.unwrap_or(DEFAULT_CPUS))?;
        let mem = quantity("mem", raw.mem.unwrap_or(DEFAULT_MEM))?;
        if instances > 0 && (cpus.is_zero() || mem.is_zero()) {
            return Err(invalid(format!("{id}: cpus and mem must be positive")));
        }
        let mut seen = raw.ports.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != raw.ports.len() {
            return Err(invalid(format!("{id}: duplicate container ports")));
        }
        if let Some(hc) = &raw.health_check {
            if hc.interval == 0 || hc.threshold == 0 {
                return Err(invalid(format!(
                    "{id}: health check interval and threshold must be positive"
                )));
            }
        }
        if raw.container.as_deref() == Some("") {
            return Err(invalid(format!("{id}: empty container image")));
        }
        Ok(AppDefinition {
            app_id: AppId::new(id),
            instances,
            resources: ResourceVector::new(cpus, mem),
            container_image: raw.container,
            ports: raw.ports,
            volumes: raw.volumes,
            constraints: raw.constraints,
            health_check: raw.health_check,
        })
    }
}

impl From<AppDefinition> for RawApp {
    fn from(d: AppDefinition) -> Self {
        RawApp {
            id: Some(d.app_id.to_string()),
            instances: Some(d.instances as i64),
            cpus: Some(d.resources.cpus.as_f64()),
            mem: Some(d.resources.mem.as_f64()),
            container: d.container_image,
            ports: d.ports,
            volumes: d.volumes,
            constraints: d.constraints,
            health_check: d.health_check,
        }
    }
}
