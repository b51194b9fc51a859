//! Three-master high-availability group.
//!
//! Cluster state (agents and tasks) lives in a registry replicated across the
//! group, so a leader change loses nothing but the offers the old leader had
//! in flight. Leadership is sticky: a recovered master with a lower id does
//! not preempt a live leader.

use serde::{Deserialize, Serialize};

use crate::ids::MasterId;

use super::MasterError;

pub const GROUP_SIZE: usize = 3;
pub const QUORUM: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterInfo {
    pub id: MasterId,
    pub zone: String,
    #[serde(skip, default = "alive_default")]
    pub alive: bool,
}

fn alive_default() -> bool {
    true
}

#[derive(Clone, Debug)]
pub struct MasterGroup {
    masters: Vec<MasterInfo>,
    leader: Option<MasterId>,
    /// Bumped on every election.
    epoch: u64,
}

impl MasterGroup {
    pub fn new(masters: Vec<MasterInfo>) -> Result<Self, MasterError> {
        if masters.len() != GROUP_SIZE {
            return Err(MasterError::GroupSize(masters.len()));
        }
        let mut ids: Vec<_> = masters.iter().map(|m| &m.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != GROUP_SIZE {
            return Err(MasterError::GroupSize(ids.len()));
        }
        Ok(MasterGroup {
            masters,
            leader: None,
            epoch: 0,
        })
    }

    /// Three masters `m1`, `m2`, `m3` in zones `a`, `b`, `c`.
    pub fn standard() -> Self {
        let masters = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, zone)| MasterInfo {
                id: MasterId::new(format!("m{}", i + 1)),
                zone: (*zone).to_owned(),
                alive: true,
            })
            .collect();
        MasterGroup::new(masters).expect("three distinct masters")
    }

    pub fn masters(&self) -> &[MasterInfo] {
        &self.masters
    }

    pub fn contains(&self, id: &MasterId) -> bool {
        self.masters.iter().any(|m| &m.id == id)
    }

    pub fn alive_count(&self) -> usize {
        self.masters.iter().filter(|m| m.alive).count()
    }

    pub fn has_quorum(&self) -> bool {
        self.alive_count() >= QUORUM
    }

    pub fn leader(&self) -> Option<&MasterId> {
        self.leader.as_ref()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The lowest-id alive master, provided a quorum is alive.
    pub fn elect_leader(&self) -> Result<MasterId, MasterError> {
        if !self.has_quorum() {
            return Err(MasterError::NoQuorum);
        }
        Ok(self
            .masters
            .iter()
            .filter(|m| m.alive)
            .map(|m| m.id.clone())
            .min()
            .expect("quorum implies a live master"))
    }

    /// Installs a new leader if there is none. Returns the newly elected id.
    pub(crate) fn ensure_leader(&mut self) -> Result<Option<MasterId>, MasterError> {
        if !self.has_quorum() {
            return Err(MasterError::NoQuorum);
        }
        if self.leader.is_some() {
            return Ok(None);
        }
        let leader = self.elect_leader()?;
        self.leader = Some(leader.clone());
        self.epoch += 1;
        Ok(Some(leader))
    }

    /// Marks a master dead. The leader steps down if it died or if the group
    /// lost quorum. Returns true when leadership was lost.
    pub(crate) fn crash(&mut self, id: &MasterId) -> Result<bool, MasterError> {
        let m = self
            .masters
            .iter_mut()
            .find(|m| &m.id == id)
            .ok_or_else(|| MasterError::UnknownMaster(id.clone()))?;
        m.alive = false;
        let leader_died = self.leader.as_ref() == Some(id);
        if leader_died || (self.leader.is_some() && !self.has_quorum()) {
            self.leader = None;
            return Ok(true);
        }
        Ok(false)
    }

    pub(crate) fn recover(&mut self, id: &MasterId) -> Result<(), MasterError> {
        let m = self
            .masters
            .iter_mut()
            .find(|m| &m.id == id)
            .ok_or_else(|| MasterError::UnknownMaster(id.clone()))?;
        m.alive = true;
        Ok(())
    }

    /// A leader, when present, is alive and backed by a quorum.
    pub fn check(&self) -> Result<(), String> {
        if let Some(leader) = &self.leader {
            let alive = self.masters.iter().any(|m| &m.id == leader && m.alive);
            if !alive {
                return Err(format!("leader {leader} is dead"));
            }
            if !self.has_quorum() {
                return Err(format!("leader {leader} holds office without quorum"));
            }
        }
        Ok(())
    }
}
