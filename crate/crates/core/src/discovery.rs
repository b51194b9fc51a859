//! Service discovery: registry snapshots of running service endpoints and an
//! HAProxy-style configuration rendered from them on a cron cadence.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::resources::SimTime;
use crate::service::{Endpoint, ServiceFramework};

pub const DEFAULT_CRON_PERIOD: SimTime = 120_000;

/// Marks where TLS termination would be attached in front of the proxy.
const SSL_NOTE: &str = "# ssl termination is handled upstream of this proxy";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub taken_at: SimTime,
    /// Sorted by (app, hostname, port), without duplicates.
    pub entries: Vec<Endpoint>,
}

impl RegistrySnapshot {
    /// Canonicalizes arbitrary endpoint order.
    pub fn new(taken_at: SimTime, mut entries: Vec<Endpoint>) -> Self {
        entries.sort();
        entries.dedup();
        RegistrySnapshot { taken_at, entries }
    }
}

pub fn snapshot(services: &ServiceFramework, now: SimTime) -> RegistrySnapshot {
    RegistrySnapshot::new(now, services.endpoints())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub rendered_at: SimTime,
    pub text: String,
}

impl ProxyConfig {
    /// The document without its timestamp header; equal registries give
    /// equal bodies.
    pub fn body(&self) -> &str {
        self.text.split_once('\n').map_or("", |(_, rest)| rest)
    }
}

/// `/` becomes `_` and leading underscores are dropped: `/ci/web` → `ci_web`.
pub fn sanitize(app_id: &str) -> String {
    app_id.replace('/', "_").trim_start_matches('_').to_owned()
}

pub fn render(snapshot: &RegistrySnapshot) -> ProxyConfig {
    let mut apps: Vec<&str> = snapshot.entries.iter().map(|e| e.app_id.as_str()).collect();
    apps.dedup();

    let mut text = String::new();
    writeln!(text, "# rendered at {}", snapshot.taken_at).unwrap();
    writeln!(text, "{SSL_NOTE}").unwrap();
    writeln!(text, "frontend http-in").unwrap();
    for app in &apps {
        writeln!(text, "  use_backend {} if path_beg {}", sanitize(app), app).unwrap();
    }
    for app in &apps {
        writeln!(text, "backend {}", sanitize(app)).unwrap();
        for e in snapshot
            .entries
            .iter()
            .filter(|e| e.app_id.as_str() == *app)
        {
            writeln!(text, "  server {0} {0}:{1}", e.hostname, e.host_port).unwrap();
        }
    }
    ProxyConfig {
        rendered_at: snapshot.taken_at,
        text,
    }
}

/// True when a cron run is due. The first tick always runs.
pub fn cron_due(now: SimTime, period: SimTime, last_run: Option<SimTime>) -> bool {
    last_run.is_none_or(|last| now.saturating_sub(last) >= period)
}

/// The proxy-refresh cron job.
#[derive(Clone, Debug)]
pub struct ProxyCron {
    period: SimTime,
    last_run: Option<SimTime>,
}

impl ProxyCron {
    pub fn new(period: SimTime) -> Self {
        assert!(period > 0, "cron period must be positive");
        ProxyCron {
            period,
            last_run: None,
        }
    }

    pub fn period(&self) -> SimTime {
        self.period
    }

    pub fn last_run(&self) -> Option<SimTime> {
        self.last_run
    }

    pub fn tick(&mut self, now: SimTime, services: &ServiceFramework) -> Option<ProxyConfig> {
        if !cron_due(now, self.period, self.last_run) {
            return None;
        }
        self.last_run = Some(now);
        Some(render(&snapshot(services, now)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{AgentId, AppId};

    fn ep(app: &str, host: &str, port: u16) -> Endpoint {
        Endpoint {
            app_id: AppId::new(app),
            hostname: AgentId::new(host),
            host_port: port,
        }
    }

    #[test]
    fn empty_snapshot_renders_a_bare_frontend() {
        let cfg = render(&RegistrySnapshot::new(0, vec![]));
        assert_eq!(
            cfg.text,
            format!("# rendered at 0\n{SSL_NOTE}\nfrontend http-in\n")
        );
    }

    #[test]
    fn exact_layout() {
        let snap = RegistrySnapshot::new(
            120000,
            vec![
                ep("/es", "a2", 31000),
                ep("/ci/web", "a1", 31001),
                ep("/es", "a1", 31000),
            ],
        );
        let expected = "\
# rendered at 120000
# ssl termination is handled upstream of this proxy
frontend http-in
  use_backend ci_web if path_beg /ci/web
  use_backend es if path_beg /es
backend ci_web
  server a1 a1:31001
backend es
  server a1 a1:31000
  server a2 a2:31000
";
        assert_eq!(render(&snap).text, expected);
    }

    #[test]
    fn one_app_two_backends_two_server_lines() {
        let snap = RegistrySnapshot::new(0, vec![ep("/x", "h1", 1), ep("/x", "h2", 2)]);
        let text = render(&snap).text;
        assert_eq!(
            text.lines()
                .filter(|l| l.trim_start().starts_with("server "))
                .count(),
            2
        );
    }

    #[test]
    fn snapshot_is_order_insensitive() {
        let a = RegistrySnapshot::new(
            5,
            vec![ep("/b", "h", 1), ep("/a", "h", 2), ep("/a", "h", 2)],
        );
        let b = RegistrySnapshot::new(5, vec![ep("/a", "h", 2), ep("/b", "h", 1)]);
        assert_eq!(a, b);
        assert_eq!(render(&a).text, render(&b).text);
        assert_eq!(a.entries.len(), 2);
    }

    #[test]
    fn body_ignores_the_timestamp() {
        let e = vec![ep("/x", "h1", 1)];
        let a = render(&RegistrySnapshot::new(0, e.clone()));
        let b = render(&RegistrySnapshot::new(120_000, e));
        assert_ne!(a.text, b.text);
        assert_eq!(a.body(), b.body());
    }

    #[test]
    fn sanitization() {
        assert_eq!(sanitize("/es"), "es");
        assert_eq!(sanitize("//a/b"), "a_b");
        assert_eq!(sanitize("plain"), "plain");
    }

    #[test]
    fn cron_boundary_is_inclusive() {
        assert!(!cron_due(119_000, 120_000, Some(0)));
        assert!(cron_due(120_000, 120_000, Some(0)));
        assert!(cron_due(0, 120_000, None));
    }

    #[test]
    fn cron_publishes_snapshot_of_the_registry() {
        use crate::ids::FrameworkId;
        let svc = ServiceFramework::new(FrameworkId::new("marathon"), true);
        let mut cron = ProxyCron::new(120_000);
        let first = cron.tick(0, &svc).unwrap();
        assert_eq!(first.rendered_at, 0);
        assert!(cron.tick(5_000, &svc).is_none());
        let second = cron.tick(120_000, &svc).unwrap();
        assert_eq!(first.body(), second.body());
        assert_eq!(cron.last_run(), Some(120_000));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn endpoint() -> impl Strategy<Value = Endpoint> {
            ("/[ab]{1,2}", "h[0-3]", 31000u16..31004).prop_map(|(a, h, p)| ep(&a, &h, p))
        }

        proptest! {
            #[test]
            fn render_is_a_function_of_the_entry_set(
                mut entries in proptest::collection::vec(endpoint(), 0..12),
                t in 0u64..1_000_000,
            ) {
                let a = render(&RegistrySnapshot::new(t, entries.clone()));
                entries.reverse();
                let b = render(&RegistrySnapshot::new(t, entries.clone()));
                prop_assert_eq!(&a.text, &b.text);
                // Server lines correspond one-to-one with distinct entries.
                entries.sort();
                entries.dedup();
                let servers = a.text.lines().filter(|l| l.starts_with("  server ")).count();
                prop_assert_eq!(servers, entries.len());
            }
        }
    }
}
