//! Dominant-resource-fairness ordering of frameworks.

use std::cmp::Ordering;

use crate::ids::FrameworkId;
use crate::resources::ResourceVector;

use super::FrameworkHandle;

/// An exact rational share `num / den`, compared by cross-multiplication.
#[derive(Clone, Copy, Debug)]
pub struct Share {
    num: u64,
    den: u64,
}

impl Share {
    pub const ZERO: Share = Share { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "share denominator must be positive");
        Share { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for Share {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for Share {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Share {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Share {}

/// max over cpus and mem of allocated / total. Disk is passive and ignored;
/// resource kinds with a zero cluster total are skipped.
pub fn dominant_share(allocated: &ResourceVector, total: &ResourceVector) -> Share {
    [
        (allocated.cpus.milli(), total.cpus.milli()),
        (allocated.mem.milli(), total.mem.milli()),
    ]
    .into_iter()
    .filter(|&(_, t)| t > 0)
    .map(|(a, t)| Share::new(a, t))
    .max()
    .unwrap_or(Share::ZERO)
}

/// Ascending dominant share; ties broken by framework id.
pub fn sort_frameworks_fair<'a>(
    frameworks: impl IntoIterator<Item = &'a FrameworkHandle>,
    cluster_total: &ResourceVector,
) -> Vec<FrameworkId> {
    let mut keyed: Vec<(Share, &FrameworkId)> = frameworks
        .into_iter()
        .map(|f| (dominant_share(&f.allocated, cluster_total), &f.framework_id))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, id)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(id: &str, cpus: f64, mem: f64) -> FrameworkHandle {
        FrameworkHandle {
            framework_id: FrameworkId::new(id),
            name: id.to_owned(),
            allocated: ResourceVector::from_f64(cpus, mem).unwrap(),
        }
    }

    #[test]
    fn zero_share_sorts_first() {
        let total = ResourceVector::from_f64(10.0, 10240.0).unwrap();
        let fws = [handle("b", 1.0, 1024.0), handle("a", 0.0, 0.0)];
        let order = sort_frameworks_fair(&fws, &total);
        assert_eq!(order, vec![FrameworkId::new("a"), FrameworkId::new("b")]);
    }

    #[test]
    fn ties_break_by_id() {
        let total = ResourceVector::from_f64(10.0, 10240.0).unwrap();
        let fws = [handle("b", 1.0, 0.0), handle("a", 0.0, 1024.0)];
        let order = sort_frameworks_fair(&fws, &total);
        assert_eq!(order, vec![FrameworkId::new("a"), FrameworkId::new("b")]);
    }

    #[test]
    fn dominant_share_takes_the_larger_fraction() {
        let total = ResourceVector::from_f64(9.0, 18432.0).unwrap();
        let a = ResourceVector::from_f64(1.0, 4096.0).unwrap();
        assert_eq!(dominant_share(&a, &total), Share::new(2, 9));
        let b = ResourceVector::from_f64(3.0, 1024.0).unwrap();
        assert_eq!(dominant_share(&b, &total), Share::new(1, 3));
    }

    #[test]
    fn shares_compare_exactly() {
        assert_eq!(Share::new(1, 3), Share::new(3000, 9000));
        assert!(Share::new(2, 9) < Share::new(1, 3));
    }
}
