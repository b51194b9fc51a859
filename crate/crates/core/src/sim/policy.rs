//! The static-partition baseline: every pool's agents are offered only to
//! the consumer the pool is bound to.

use crate::ids::FrameworkId;
use crate::master::{Master, MasterError, Offer, OfferInterest, OfferScope};
use crate::resources::SimTime;

use super::scenario::{Pool, PoolBinding};

pub fn scope_of(binding: &PoolBinding) -> OfferScope {
    match binding {
        PoolBinding::Services => OfferScope::Services,
        PoolBinding::Queue(label) => OfferScope::Queue(label.clone()),
    }
}

/// One allocation round under the static map. `owner` names the framework
/// serving a binding. Pools are visited in map order and their agents in id
/// order, so a single pool holding the whole cluster offers exactly what a
/// dynamic round would.
pub fn static_policy_round(
    master: &mut Master,
    pools: &[Pool],
    owner: &dyn Fn(&PoolBinding) -> Option<FrameworkId>,
    interest: &dyn OfferInterest,
    now: SimTime,
) -> Result<Vec<Offer>, MasterError> {
    master.begin_round()?;
    let mut offers = Vec::new();
    for pool in pools {
        let scope = scope_of(&pool.bind);
        let Some(framework) = owner(&pool.bind) else {
            continue;
        };
        if !interest.wants(&framework, &scope) {
            continue;
        }
        let sorted;
        let agents = if pool.agents.is_sorted() {
            &pool.agents
        } else {
            sorted = {
                let mut a = pool.agents.clone();
                a.sort();
                a
            };
            &sorted
        };
        for agent in agents {
            if master.offerable(agent)?.is_some() && !master.backed_off(agent, &framework) {
                offers.push(master.offer_agent(agent, &framework, scope.clone(), now)?);
            }
        }
    }
    Ok(offers)
}
