//! Workload placement for a provisioning decision.
//!
//! The scheduler maps every live workload to at most one host of the
//! post-decision fleet, emitting a migration for each workload moved off a
//! host that is being deallocated. Capacity is enforced on all three
//! resources; anything that does not fit stays queued.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{DemandVector, Demands, HostId, WorkloadId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecisionError {
    #[error("cannot deallocate {0}: not an active host")]
    UnknownHost(HostId),
    #[error("unknown VM type index {0}")]
    UnknownVmType(usize),
    #[error("decision would leave {requested} hosts, above the cap of {max}")]
    TooManyHosts { requested: usize, max: usize },
    #[error("decision deallocates every host while workloads remain")]
    DeallocatesAll,
}

/// `P_t`: VM types to create (a multiset, by catalog index) and hosts to
/// release.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisioningDecision {
    pub provisions: Vec<usize>,
    pub deallocations: BTreeSet<HostId>,
}

impl ProvisioningDecision {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.provisions.is_empty() && self.deallocations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.provisions.len() + self.deallocations.len()
    }

    pub fn with_provision(mut self, vm_type: usize) -> Self {
        self.provisions.push(vm_type);
        self
    }

    pub fn with_deallocation(mut self, host: HostId) -> Self {
        self.deallocations.insert(host);
        self
    }

    /// Host count after applying the decision to `active` hosts.
    pub fn resulting_hosts(&self, active: usize) -> usize {
        (active + self.provisions.len()).saturating_sub(self.deallocations.len())
    }

    pub fn validate(
        &self,
        active: &[HostId],
        catalog_len: usize,
        max_hosts: usize,
        live_workloads: usize,
    ) -> Result<(), DecisionError> {
        for h in &self.deallocations {
            if !active.contains(h) {
                return Err(DecisionError::UnknownHost(*h));
            }
        }
        if let Some(&bad) = self.provisions.iter().find(|&&v| v >= catalog_len) {
            return Err(DecisionError::UnknownVmType(bad));
        }
        let requested = self.resulting_hosts(active.len());
        if requested > max_hosts {
            return Err(DecisionError::TooManyHosts {
                requested,
                max: max_hosts,
            });
        }
        if live_workloads > 0 && requested == 0 && !active.is_empty() {
            return Err(DecisionError::DeallocatesAll);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub workload: WorkloadId,
    pub from: HostId,
    pub to: HostId,
}

/// `D̂_t`: bipartite placement plus preemptive migrations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub placements: BTreeMap<WorkloadId, HostId>,
    pub migrations: Vec<Migration>,
}

impl Schedule {
    pub fn host_of(&self, w: WorkloadId) -> Option<HostId> {
        self.placements.get(&w).copied()
    }
}

/// A host of the post-decision fleet as seen by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostSlot {
    pub id: HostId,
    pub vm_type: usize,
    pub capacity: DemandVector,
}

/// Everything the scheduler needs for one interval.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleRequest<'a> {
    /// Post-decision fleet, including hosts about to be provisioned.
    pub hosts: &'a [HostSlot],
    /// Live workloads (placed and queued).
    pub workloads: &'a [WorkloadId],
    /// Demand estimate per workload; missing entries count as zero.
    pub demands: &'a Demands,
    /// Placements from the previous interval.
    pub previous: &'a BTreeMap<WorkloadId, HostId>,
    pub deallocated: &'a BTreeSet<HostId>,
}

impl ScheduleRequest<'_> {
    fn demand(&self, w: WorkloadId) -> DemandVector {
        self.demands.get(&w).copied().unwrap_or_default()
    }
}

/// `f^sched`. Implementations must be pure functions of the request.
pub trait Scheduler: Sync {
    fn schedule(&self, req: &ScheduleRequest<'_>) -> Schedule;
}

/// Deterministic best-fit decreasing.
///
/// Workloads on surviving hosts stay put while they fit (ascending id);
/// the rest are sorted by cpu demand, largest first, and each goes to the
/// fitting host with the least remaining cpu, lowest id on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct BestFitDecreasing;

impl Scheduler for BestFitDecreasing {
    fn schedule(&self, req: &ScheduleRequest<'_>) -> Schedule {
        let mut remaining: BTreeMap<HostId, DemandVector> =
            req.hosts.iter().map(|h| (h.id, h.capacity)).collect();
        let mut placements = BTreeMap::new();
        let mut pool = Vec::new();

        let mut ordered: Vec<WorkloadId> = req.workloads.to_vec();
        ordered.sort_unstable();
        ordered.dedup();

        for &w in &ordered {
            let demand = req.demand(w);
            let kept = req
                .previous
                .get(&w)
                .filter(|h| !req.deallocated.contains(h))
                .and_then(|h| remaining.get_mut(h).map(|rem| (*h, rem)))
                .filter(|(_, rem)| demand.fits_within(rem));
            match kept {
                Some((h, rem)) => {
                    *rem = *rem - demand;
                    placements.insert(w, h);
                }
                None => pool.push(w),
            }
        }

        // Stable sort keeps ascending id among equal cpu demands.
        pool.sort_by(|a, b| req.demand(*b).cpu.total_cmp(&req.demand(*a).cpu));

        let mut migrations = Vec::new();
        for w in pool {
            let demand = req.demand(w);
            let best = remaining
                .iter()
                .filter(|(_, rem)| demand.fits_within(rem))
                .min_by(|(ha, ra), (hb, rb)| ra.cpu.total_cmp(&rb.cpu).then(ha.cmp(hb)))
                .map(|(h, _)| *h);
            if let Some(h) = best {
                let rem = remaining.get_mut(&h).expect("host present");
                *rem = *rem - demand;
                placements.insert(w, h);
                if let Some(&from) = req.previous.get(&w) {
                    if req.deallocated.contains(&from) {
                        migrations.push(Migration {
                            workload: w,
                            from,
                            to: h,
                        });
                    }
                }
            }
        }

        Schedule {
            placements,
            migrations,
        }
    }
}

/// Capacity minus the demand of every workload placed on `host`.
pub fn remaining_capacity(
    host: &HostSlot,
    placements: &BTreeMap<WorkloadId, HostId>,
    demands: &Demands,
) -> DemandVector {
    let used: DemandVector = placements
        .iter()
        .filter(|(_, h)| **h == host.id)
        .map(|(w, _)| demands.get(w).copied().unwrap_or_default())
        .sum();
    host.capacity - used
}

/// True when no host in `hosts` is loaded beyond its capacity.
pub fn respects_capacity(
    hosts: &[HostSlot],
    placements: &BTreeMap<WorkloadId, HostId>,
    demands: &Demands,
) -> bool {
    hosts.iter().all(|h| {
        let rem = remaining_capacity(h, placements, demands);
        DemandVector::ZERO.fits_within(&rem)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn slot(id: u64, cpu: f64) -> HostSlot {
        HostSlot {
            id: HostId(id),
            vm_type: 0,
            capacity: DemandVector::new(cpu, 4.0, 32.0),
        }
    }

    fn cpu(v: f64) -> DemandVector {
        DemandVector::new(v, 0.5, 1.0)
    }

    #[test]
    fn singleton_placement() {
        let hosts = [slot(0, 4000.0)];
        let demands: Demands = [(WorkloadId(1), cpu(1000.0))].into_iter().collect();
        let s = BestFitDecreasing.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &[WorkloadId(1)],
            demands: &demands,
            previous: &BTreeMap::new(),
            deallocated: &BTreeSet::new(),
        });
        assert_eq!(s.host_of(WorkloadId(1)), Some(HostId(0)));
        assert!(s.migrations.is_empty());
    }

    #[test]
    fn deallocation_emits_migration() {
        // Host A (0) is released; w1 moves to B (1).
        let hosts = [slot(1, 4000.0)];
        let demands: Demands = [(WorkloadId(1), cpu(1000.0))].into_iter().collect();
        let previous = [(WorkloadId(1), HostId(0))].into_iter().collect();
        let dealloc = [HostId(0)].into_iter().collect();
        let s = BestFitDecreasing.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &[WorkloadId(1)],
            demands: &demands,
            previous: &previous,
            deallocated: &dealloc,
        });
        assert_eq!(
            s.migrations,
            vec![Migration {
                workload: WorkloadId(1),
                from: HostId(0),
                to: HostId(1)
            }]
        );
    }

    #[test]
    fn empty_decision_is_a_fixed_point() {
        let hosts = [slot(0, 4000.0), slot(1, 4000.0)];
        let demands: Demands = (0..4).map(|i| (WorkloadId(i), cpu(900.0))).collect();
        let previous: BTreeMap<_, _> = (0..4)
            .map(|i| (WorkloadId(i), HostId(i % 2)))
            .collect();
        let ids: Vec<_> = (0..4).map(WorkloadId).collect();
        let s = BestFitDecreasing.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &ids,
            demands: &demands,
            previous: &previous,
            deallocated: &BTreeSet::new(),
        });
        assert_eq!(s.placements, previous);
        assert!(s.migrations.is_empty());
    }

    #[test]
    fn best_fit_prefers_tightest_host_then_lowest_id() {
        let hosts = [slot(0, 4000.0), slot(1, 2000.0), slot(2, 2000.0)];
        let demands: Demands = [(WorkloadId(9), cpu(1500.0))].into_iter().collect();
        let s = BestFitDecreasing.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &[WorkloadId(9)],
            demands: &demands,
            previous: &BTreeMap::new(),
            deallocated: &BTreeSet::new(),
        });
        assert_eq!(s.host_of(WorkloadId(9)), Some(HostId(1)));
    }

    #[test]
    fn unplaceable_workloads_stay_queued() {
        let hosts = [slot(0, 1000.0)];
        let demands: Demands = [(WorkloadId(0), cpu(800.0)), (WorkloadId(1), cpu(700.0))]
            .into_iter()
            .collect();
        let s = BestFitDecreasing.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &[WorkloadId(0), WorkloadId(1)],
            demands: &demands,
            previous: &BTreeMap::new(),
            deallocated: &BTreeSet::new(),
        });
        assert_eq!(s.placements.len(), 1);
        assert_eq!(s.host_of(WorkloadId(0)), Some(HostId(0)));
    }

    #[test]
    fn remaining_capacity_arithmetic() {
        let h = slot(0, 4000.0);
        let demands: Demands = [(WorkloadId(0), cpu(1000.0)), (WorkloadId(1), cpu(2000.0))]
            .into_iter()
            .collect();
        assert_eq!(
            remaining_capacity(&h, &BTreeMap::new(), &demands),
            h.capacity
        );
        let placed = demands.keys().map(|w| (*w, HostId(0))).collect();
        assert_eq!(remaining_capacity(&h, &placed, &demands).cpu, 1000.0);
        let full: Demands = [(WorkloadId(0), h.capacity)].into_iter().collect();
        let placed = [(WorkloadId(0), HostId(0))].into_iter().collect();
        assert_eq!(remaining_capacity(&h, &placed, &full), DemandVector::ZERO);
    }

    #[test]
    fn decision_validation() {
        let active = [HostId(0), HostId(1)];
        let d = ProvisioningDecision::empty().with_deallocation(HostId(5));
        assert_eq!(d.validate(&active, 3, 10, 1), Err(DecisionError::UnknownHost(HostId(5))));
        let d = ProvisioningDecision::empty().with_provision(0);
        assert!(matches!(d.validate(&active, 3, 2, 1), Err(DecisionError::TooManyHosts { .. })));
        let d = ProvisioningDecision::empty()
            .with_deallocation(HostId(0))
            .with_deallocation(HostId(1));
        assert_eq!(d.validate(&active, 3, 10, 1), Err(DecisionError::DeallocatesAll));
        assert!(d.validate(&active, 3, 10, 0).is_ok());
        let d = ProvisioningDecision::empty().with_provision(3);
        assert_eq!(d.validate(&active, 3, 10, 0), Err(DecisionError::UnknownVmType(3)));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<(f64, f64, f64)>, Vec<Option<usize>>, u8)> {
        (
            prop::collection::vec(1000.0f64..8000.0, 1..6),
            prop::collection::vec((0.0f64..3000.0, 0.0f64..3.0, 0.0f64..10.0), 0..20),
            prop::collection::vec(prop::option::of(0usize..6), 20),
            any::<u8>(),
        )
    }

    proptest! {
        #[test]
        fn schedule_respects_capacity_and_reports_migrations((caps, ws, prev, mask) in instance()) {
            let all_hosts: Vec<HostSlot> = caps.iter().enumerate()
                .map(|(i, c)| HostSlot { id: HostId(i as u64), vm_type: 0, capacity: DemandVector::new(*c, 4.0, 32.0) })
                .collect();
            let deallocated: BTreeSet<HostId> = all_hosts.iter()
                .filter(|h| mask & (1 << h.id.0) != 0)
                .map(|h| h.id)
                .collect();
            let hosts: Vec<HostSlot> = all_hosts.iter().filter(|h| !deallocated.contains(&h.id)).copied().collect();
            let demands: Demands = ws.iter().enumerate()
                .map(|(i, (c, r, d))| (WorkloadId(i as u64), DemandVector::new(*c, *r, *d)))
                .collect();
            let previous: BTreeMap<WorkloadId, HostId> = (0..ws.len())
                .filter_map(|i| prev[i].filter(|h| *h < caps.len()).map(|h| (WorkloadId(i as u64), HostId(h as u64))))
                .collect();
            let ids: Vec<_> = demands.keys().copied().collect();
            let req = ScheduleRequest { hosts: &hosts, workloads: &ids, demands: &demands, previous: &previous, deallocated: &deallocated };
            let s = BestFitDecreasing.schedule(&req);
            prop_assert!(respects_capacity(&hosts, &s.placements, &demands));
            for h in s.placements.values() {
                prop_assert!(hosts.iter().any(|x| x.id == *h));
            }
            let expected: BTreeSet<WorkloadId> = s.placements.keys()
                .filter(|w| previous.get(w).is_some_and(|h| deallocated.contains(h)))
                .copied()
                .collect();
            let got: BTreeSet<WorkloadId> = s.migrations.iter().map(|m| m.workload).collect();
            prop_assert_eq!(got, expected);
            prop_assert_eq!(BestFitDecreasing.schedule(&req), s);
        }
    }
}
