//! Job arrivals. Every random draw comes from a named stream derived from the
//! scenario seed, so adding a stream never perturbs the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::build::JobKind;
use crate::resources::SimTime;

use super::scenario::{Scenario, WorkloadEntry, MS_PER_DAY};

/// 64-bit FNV-1a.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// The generator for one purpose, e.g. `"arrivals/0"`.
pub fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(purpose));
    rng
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arrival {
    pub at: SimTime,
    pub kind: JobKind,
    pub label: String,
    pub duration: SimTime,
}

/// Submission times of one workload entry within `[0, horizon)` (timelines
/// may also land exactly on the horizon).
pub fn arrival_times(
    entry: &WorkloadEntry,
    seed: u64,
    index: usize,
    horizon: SimTime,
) -> Vec<SimTime> {
    if let Some(times) = &entry.timeline {
        let mut times = times.clone();
        times.sort_unstable();
        return times;
    }
    let rate = entry.rate_per_day.unwrap_or(0.0);
    if rate <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate / MS_PER_DAY).expect("positive finite rate");
    let mut rng = stream(seed, &format!("arrivals/{index}"));
    let mut t = 0.0f64;
    let mut out = Vec::new();
    loop {
        t += gap.sample(&mut rng);
        if t >= horizon as f64 {
            return out;
        }
        out.push(t as SimTime);
    }
}

/// All arrivals of a scenario, sorted by time and then by entry order.
pub fn generate(scenario: &Scenario, seed: u64) -> Vec<Arrival> {
    let mut out = Vec::new();
    for (i, entry) in scenario.workload.iter().enumerate() {
        let times = arrival_times(entry, seed, i, scenario.duration);
        let mut durations = stream(seed, &format!("durations/{i}"));
        for at in times {
            let duration = if entry.duration_jitter > 0.0 {
                let d = entry.duration as f64;
                let spread = d * entry.duration_jitter;
                (durations.random_range(d - spread..=d + spread).round() as SimTime).max(1)
            } else {
                entry.duration
            };
            out.push((
                at,
                i,
                Arrival {
                    at,
                    kind: entry.kind,
                    label: entry.label.clone(),
                    duration,
                },
            ));
        }
    }
    out.sort_by_key(|(at, i, _)| (*at, *i));
    out.into_iter().map(|(_, _, a)| a).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson(rate: f64) -> WorkloadEntry {
        WorkloadEntry {
            kind: JobKind::Release,
            label: "slc6-release".into(),
            duration: 3_600_000,
            duration_jitter: 0.0,
            rate_per_day: Some(rate),
            timeline: None,
        }
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a1: u64 = stream(7, "arrivals/0").random();
        let a2: u64 = stream(7, "arrivals/0").random();
        let b: u64 = stream(7, "arrivals/1").random();
        let c: u64 = stream(8, "arrivals/0").random();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_ne!(a1, c);
    }

    #[test]
    fn poisson_rate_matches_over_many_days() {
        // 21 per day over 200 days: the count has sd ≈ sqrt(4200) ≈ 65.
        let days = 200;
        let n = arrival_times(&poisson(21.0), 1, 0, days * 86_400_000).len() as f64;
        assert!((n - 4200.0).abs() < 5.0 * 65.0, "{n}");
    }

    #[test]
    fn timelines_are_used_verbatim() {
        let mut e = poisson(0.0);
        e.rate_per_day = None;
        e.timeline = Some(vec![30, 10, 20]);
        assert_eq!(arrival_times(&e, 1, 0, 100), vec![10, 20, 30]);
    }

    #[test]
    fn zero_rate_generates_nothing() {
        assert!(arrival_times(&poisson(0.0), 1, 0, 1_000_000).is_empty());
    }
}
