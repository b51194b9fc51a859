//! Seeded random scenarios for stress and conservation testing.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::build::{JobKind, QueueConfig};
use crate::ids::AgentId;
use crate::resources::{AgentSpec, AttributeSet, ResourceVector, SimTime};
use crate::service::{AppDefinition, Constraint, HealthCheck};

use super::scenario::{
    Failure, FailureKind, Operation, OperationKind, Pool, PoolBinding, Scenario, WorkloadEntry,
};
use super::workload::stream;

const HOUR: SimTime = 3_600_000;

/// Size knobs of a generated scenario.
#[derive(Clone, Debug)]
pub struct Shape {
    pub agents: usize,
    pub duration: SimTime,
    /// Mean job arrivals per day summed over all queues.
    pub jobs_per_day: f64,
    pub failures: usize,
    pub operations: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            agents: 20,
            duration: 36 * HOUR,
            jobs_per_day: 600.0,
            failures: 40,
            operations: 12,
        }
    }
}

/// A scenario with one service framework and two build frameworks (one of
/// them serving an SLC5 image), random workload, faults and operations.
/// Every target named by a fault exists, so the result always validates.
pub fn random_scenario(seed: u64, shape: &Shape) -> Scenario {
    let mut rng = stream(seed, "synth");
    let zones = ["a", "b", "c"];
    let agents: Vec<AgentSpec> = (0..shape.agents)
        .map(|i| {
            let cpus = *[4.0, 8.0, 16.0].choose(&mut rng).expect("non-empty");
            let mem = cpus * 2048.0;
            let mut attrs = AttributeSet::new().with("os", "slc6");
            if i < 4 {
                attrs = attrs.with("datanode", "es");
            }
            AgentSpec::new(
                AgentId::new(format!("node-{:02}", i + 1)),
                ResourceVector::from_f64(cpus, mem).expect("finite"),
                attrs,
                zones[i % zones.len()],
            )
            .expect("valid agent")
        })
        .collect();

    let queue = |label: &str, cpus: f64, max: u32| {
        QueueConfig::new(label, cpus, cpus * 1945.6, max).expect("valid queue")
    };
    let queues = vec![
        queue("slc6-pr", 2.0, 12).with_weight(2),
        queue("slc6-release", 4.0, 8).with_weight(3),
        queue("slc5-release", 4.0, 4)
            .with_image("slc5")
            .with_framework("jenkins-legacy")
            .with_idle_timeout(60_000),
    ];

    let mut es = AppDefinition::new("/es", 3, 1.0, 2048.0)
        .expect("valid app")
        .with_ports(&[9200])
        .with_constraint(Constraint::unique("hostname"))
        .with_constraint(Constraint::cluster("datanode", "es"));
    es.health_check = Some(HealthCheck {
        interval: 10_000,
        threshold: 3,
    });
    let web = AppDefinition::new("/web", rng.random_range(1..=4), 0.5, 512.0)
        .expect("valid app")
        .with_ports(&[80])
        .with_constraint(Constraint::like("zone", "a|b"));
    let api = AppDefinition::new("/api", 2, 1.0, 1024.0)
        .expect("valid app")
        .with_ports(&[8080, 8081]);
    let apps = vec![es, web, api];

    let per_queue = shape.jobs_per_day / 3.0;
    let workload = vec![
        entry(JobKind::PrTest, "slc6-pr", 1_200_000, per_queue * 1.5),
        entry(JobKind::Release, "slc6-release", 3_600_000, per_queue),
        entry(JobKind::Ib, "slc5-release", 900_000, per_queue * 0.5),
    ];

    let horizon = shape.duration.max(1);
    let agent_ids: Vec<String> = agents.iter().map(|a| a.agent_id.to_string()).collect();
    let mut failures = Vec::with_capacity(shape.failures);
    for _ in 0..shape.failures {
        let at = rng.random_range(0..horizon);
        let (kind, target) = match rng.random_range(0..10) {
            0..=2 => (FailureKind::AgentCrash, agent_ids.choose(&mut rng).cloned()),
            3..=4 => (
                FailureKind::AgentRecover,
                agent_ids.choose(&mut rng).cloned(),
            ),
            5 => (
                FailureKind::MasterCrash,
                Some(format!("m{}", rng.random_range(1..=3))),
            ),
            6 => (
                FailureKind::MasterRecover,
                Some(format!("m{}", rng.random_range(1..=3))),
            ),
            _ => {
                let targets = [
                    "/es",
                    "/web",
                    "/api",
                    "slc6-pr",
                    "slc6-release",
                    "slc5-release",
                ];
                (
                    FailureKind::TaskFail,
                    targets.choose(&mut rng).map(|t| t.to_string()),
                )
            }
        };
        failures.push(Failure {
            at,
            kind,
            target: target.expect("non-empty choice"),
        });
    }
    failures.sort_by_key(|f| f.at);

    let mut operations = Vec::with_capacity(shape.operations);
    for _ in 0..shape.operations {
        let at = rng.random_range(0..horizon);
        let kind = match rng.random_range(0..3) {
            0 => OperationKind::Scale {
                app: "/web".into(),
                instances: rng.random_range(0..=6),
            },
            1 => OperationKind::Deploy {
                app: AppDefinition::new(
                    "/api",
                    rng.random_range(1..=3),
                    1.0,
                    1024.0 * rng.random_range(1..=2) as f64,
                )
                .expect("valid app")
                .with_ports(&[8080]),
            },
            _ => OperationKind::Rollback {
                app: "/api".into(),
                version: rng.random_range(1..=3),
            },
        };
        operations.push(Operation { at, kind });
    }
    operations.sort_by_key(|o| o.at);

    let n = agent_ids.len();
    let pool = |name: &str, ids: &[String], bind: PoolBinding| Pool {
        name: name.to_owned(),
        agents: ids.iter().map(AgentId::new).collect(),
        bind,
    };
    let cut = |f: f64| ((n as f64 * f).round() as usize).min(n);
    let static_map = vec![
        pool("services", &agent_ids[..cut(0.25)], PoolBinding::Services),
        pool(
            "pr",
            &agent_ids[cut(0.25)..cut(0.55)],
            PoolBinding::Queue("slc6-pr".into()),
        ),
        pool(
            "release",
            &agent_ids[cut(0.55)..cut(0.85)],
            PoolBinding::Queue("slc6-release".into()),
        ),
        pool(
            "legacy",
            &agent_ids[cut(0.85)..],
            PoolBinding::Queue("slc5-release".into()),
        ),
    ];

    let mut sc = Scenario::new(&format!("random-{seed}"), seed, shape.duration, agents);
    sc.queues = queues;
    sc.apps = apps;
    sc.workload = workload;
    sc.failures = failures;
    sc.operations = operations;
    sc.static_map = Some(static_map);
    sc.framework_latency = rng.random_range(0..=2) * 500;
    sc.launch_delay = rng.random_range(0..=3) * 5_000;
    sc
}

fn entry(kind: JobKind, label: &str, duration: SimTime, rate: f64) -> WorkloadEntry {
    WorkloadEntry {
        kind,
        label: label.to_owned(),
        duration,
        duration_jitter: 0.5,
        rate_per_day: Some(rate),
        timeline: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for seed in 0..20 {
            let sc = random_scenario(seed, &Shape::default());
            sc.validate().unwrap();
            assert_eq!(sc.build_frameworks().len(), 2);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = random_scenario(9, &Shape::default());
        let b = random_scenario(9, &Shape::default());
        assert_eq!(a, b);
        assert_ne!(a, random_scenario(10, &Shape::default()));
    }
}
