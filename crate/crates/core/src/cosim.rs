//! The co-simulated digital twin.
//!
//! [`SimState::step`] advances the cloud by one interval of `Δ` seconds
//! under a provisioning decision and a schedule and returns the interval's
//! [`QoSReport`]. [`SimState::what_if`] runs the same step on a clone, so the
//! caller's state (including the RNG stream) is left untouched.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DemandVector, Demands, DomainError, Host, HostId, VmCatalog, Workload, WorkloadId};
use crate::sched::{
    DecisionError, HostSlot, ProvisioningDecision, Schedule, ScheduleRequest, Scheduler,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid decision: {0}")]
    Decision(#[from] DecisionError),
    #[error("schedule places {workload} on unknown host {host}")]
    UnknownHost { workload: WorkloadId, host: HostId },
    #[error("schedule places unknown workload {0}")]
    UnknownWorkload(WorkloadId),
    #[error("workload {0} admitted twice")]
    DuplicateWorkload(WorkloadId),
    #[error("invalid QoS weights: must be non-negative and sum to 1")]
    InvalidWeights,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Convex-combination weights of the QoS score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosWeights {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Default for QosWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            delta: 1.0 / 3.0,
        }
    }
}

impl QosWeights {
    pub fn new(alpha: f64, beta: f64, delta: f64) -> Result<Self, SimError> {
        let w = Self { alpha, beta, delta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let parts = [self.alpha, self.beta, self.delta];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(SimError::InvalidWeights);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Interval length Δ in seconds.
    pub interval_s: f64,
    /// Cost weight γ of the reward.
    pub gamma: f64,
    pub weights: QosWeights,
    /// Migration throughput; a migrated workload is delayed `ram / rate` seconds.
    pub migration_rate_gb_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            interval_s: 300.0,
            gamma: 0.5,
            weights: QosWeights::default(),
            migration_rate_gb_s: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return Err(SimError::InvalidConfig("interval_s must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SimError::InvalidConfig("gamma must be non-negative"));
        }
        if !(self.migration_rate_gb_s.is_finite() && self.migration_rate_gb_s > 0.0) {
            return Err(SimError::InvalidConfig("migration rate must be positive"));
        }
        self.weights.validate()
    }
}

/// `Q̂ = 1 − (α·q^e + β·q^r + δ·q^sla)`.
pub fn qos_score(q_e: f64, q_r: f64, q_sla: f64, w: &QosWeights) -> f64 {
    1.0 - (w.alpha * q_e + w.beta * q_r + w.delta * q_sla)
}

/// `R̂ = r − γ·φ_norm`.
pub fn reward(r: f64, cost_norm: f64, gamma: f64) -> f64 {
    r - gamma * cost_norm
}

/// Metrics of one simulated interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoSReport {
    /// Interval index the report describes.
    pub t: usize,
    /// Utilization ratio `r_t ∈ [0, 1]`.
    pub r: f64,
    /// `φ_t` in USD.
    pub cost_usd: f64,
    /// `φ_t / (max_hosts · max μ · Δ)`.
    pub cost_norm: f64,
    pub energy_kwh: f64,
    pub q_e: f64,
    pub q_r: f64,
    pub q_sla: f64,
    /// `Q̂_t`.
    pub qos: f64,
    /// `R̂_t`.
    pub reward: f64,
    pub active_hosts: usize,
    /// Workloads alive during the interval (before completions).
    pub live_workloads: usize,
    pub queued: usize,
    pub completed: usize,
    pub sla_violations: usize,
    /// Sum of response times of this interval's completions, seconds.
    pub response_sum_s: f64,
    /// Seconds spent by workloads waiting in the queue this interval.
    pub waiting_s: f64,
    pub migrations: usize,
    pub provisions: usize,
    pub deallocations: usize,
    /// Boot seconds of hosts provisioned this interval.
    pub provision_overhead_s: f64,
}

/// Cumulative totals since the start of the episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub arrived: u64,
    pub completed: u64,
    pub sla_violations: u64,
    pub energy_kwh: f64,
    pub cost_usd: f64,
    pub response_sum_s: f64,
    pub waiting_s: f64,
    pub migrations: u64,
    pub provisions: u64,
    pub deallocations: u64,
    pub provision_overhead_s: f64,
}

/// Utilization ratio: placed cpu over host cpu capacity (0 without hosts).
pub fn utilization_ratio(placed_cpu: f64, capacity_cpu: f64) -> f64 {
    if capacity_cpu > 0.0 {
        (placed_cpu / capacity_cpu).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Normalized cost of a fleet: `Σ μ_h / (max_hosts · max μ)` (interval
/// length cancels). Proportional to the fleet's spend and 1 for a full
/// fleet of the costliest type. Zero without hosts or when every type is
/// free.
pub fn normalized_cost(catalog: &VmCatalog, host_types: &[usize]) -> f64 {
    let max = catalog.max_cost_per_hour();
    if host_types.is_empty() || max <= 0.0 {
        return 0.0;
    }
    let sum: f64 = host_types
        .iter()
        .map(|&v| catalog.vm_type(v).cost_per_hour)
        .sum();
    (sum / (catalog.max_hosts() as f64 * max)).min(1.0)
}

/// The live cloud: hosts, workloads, placements, queue and totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    t: usize,
    hosts: Vec<Host>,
    next_host_id: u64,
    workloads: BTreeMap<WorkloadId, Workload>,
    placements: BTreeMap<WorkloadId, HostId>,
    queue: Vec<WorkloadId>,
    observed: Demands,
    rng: ChaCha8Rng,
    last_report: Option<QoSReport>,
    ledger: Ledger,
}

impl SimState {
    pub fn new(seed: u64) -> Self {
        Self {
            t: 0,
            hosts: Vec::new(),
            next_host_id: 0,
            workloads: BTreeMap::new(),
            placements: BTreeMap::new(),
            queue: Vec::new(),
            observed: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_report: None,
            ledger: Ledger::default(),
        }
    }

    /// Starts with already-booted hosts of the given catalog types.
    pub fn with_hosts(seed: u64, host_types: &[usize]) -> Self {
        let mut s = Self::new(seed);
        for &v in host_types {
            s.hosts.push(Host {
                id: HostId(s.next_host_id),
                vm_type: v,
                active_since: 0,
                pending_until: None,
            });
            s.next_host_id += 1;
        }
        s
    }

    pub fn interval(&self) -> usize {
        self.t
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn host_ids(&self) -> Vec<HostId> {
        self.hosts.iter().map(|h| h.id).collect()
    }

    pub fn workloads(&self) -> &BTreeMap<WorkloadId, Workload> {
        &self.workloads
    }

    pub fn live_ids(&self) -> Vec<WorkloadId> {
        self.workloads.keys().copied().collect()
    }

    pub fn placements(&self) -> &BTreeMap<WorkloadId, HostId> {
        &self.placements
    }

    pub fn queue(&self) -> &[WorkloadId] {
        &self.queue
    }

    /// `W_{t−1}`: demands observed in the last interval; zero for workloads
    /// that arrived since.
    pub fn observed_demands(&self) -> Demands {
        self.workloads
            .keys()
            .map(|w| (*w, self.observed.get(w).copied().unwrap_or_default()))
            .collect()
    }

    /// `W_t`: each live workload's trace value for the current interval.
    pub fn true_demands(&self) -> Result<Demands, SimError> {
        self.workloads
            .values()
            .map(|w| Ok((w.id, w.demand_at(self.t)?)))
            .collect()
    }

    pub fn last_report(&self) -> Option<&QoSReport> {
        self.last_report.as_ref()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Ids the next provisions will receive, in decision order.
    pub fn next_host_id(&self) -> u64 {
        self.next_host_id
    }

    /// Adds newly arrived workloads to the back of the queue.
    pub fn admit<I: IntoIterator<Item = Workload>>(&mut self, arrivals: I) -> Result<(), SimError> {
        for w in arrivals {
            if self.workloads.contains_key(&w.id) {
                return Err(SimError::DuplicateWorkload(w.id));
            }
            self.queue.push(w.id);
            self.workloads.insert(w.id, w);
            self.ledger.arrived += 1;
        }
        Ok(())
    }

    /// Current fleet as scheduler slots, ascending id.
    pub fn host_slots(&self, catalog: &VmCatalog) -> Vec<HostSlot> {
        self.hosts
            .iter()
            .map(|h| HostSlot {
                id: h.id,
                vm_type: h.vm_type,
                capacity: catalog.vm_type(h.vm_type).capacity(),
            })
            .collect()
    }

    /// Fleet after `decision`: survivors plus new hosts with the ids they
    /// will be given by [`SimState::step`].
    pub fn hosts_after(&self, decision: &ProvisioningDecision, catalog: &VmCatalog) -> Vec<HostSlot> {
        let mut slots: Vec<HostSlot> = self
            .host_slots(catalog)
            .into_iter()
            .filter(|h| !decision.deallocations.contains(&h.id))
            .collect();
        for (k, &v) in decision.provisions.iter().enumerate() {
            slots.push(HostSlot {
                id: HostId(self.next_host_id + k as u64),
                vm_type: v,
                capacity: catalog.vm_type(v).capacity(),
            });
        }
        slots
    }

    /// `f^sched(H_{t−1}, demands, P_t)` for this state.
    pub fn plan(
        &self,
        scheduler: &dyn Scheduler,
        catalog: &VmCatalog,
        demands: &Demands,
        decision: &ProvisioningDecision,
    ) -> Schedule {
        let hosts = self.hosts_after(decision, catalog);
        let ids = self.live_ids();
        scheduler.schedule(&ScheduleRequest {
            hosts: &hosts,
            workloads: &ids,
            demands,
            previous: &self.placements,
            deallocated: &decision.deallocations,
        })
    }

    pub fn validate_decision(
        &self,
        decision: &ProvisioningDecision,
        catalog: &VmCatalog,
    ) -> Result<(), DecisionError> {
        decision.validate(
            &self.host_ids(),
            catalog.len(),
            catalog.max_hosts(),
            self.workloads.len(),
        )
    }

    /// Simulates the interval on a clone; `self` is not modified.
    pub fn what_if(
        &self,
        catalog: &VmCatalog,
        cfg: &SimConfig,
        demands: &Demands,
        decision: &ProvisioningDecision,
        schedule: &Schedule,
    ) -> Result<QoSReport, SimError> {
        self.clone().step(catalog, cfg, demands, decision, schedule)
    }

    /// `f^sim`: applies `decision`, executes `schedule` under `demands` and
    /// advances to the next interval.
    pub fn step(
        &mut self,
        catalog: &VmCatalog,
        cfg: &SimConfig,
        demands: &Demands,
        decision: &ProvisioningDecision,
        schedule: &Schedule,
    ) -> Result<QoSReport, SimError> {
        self.validate_decision(decision, catalog)?;
        let dt = cfg.interval_s;
        let demand_of = |w: &WorkloadId| demands.get(w).copied().unwrap_or_default();

        // Check the schedule before mutating anything.
        let surviving: BTreeSet<HostId> = self
            .hosts
            .iter()
            .map(|h| h.id)
            .filter(|h| !decision.deallocations.contains(h))
            .chain((0..decision.provisions.len() as u64).map(|k| HostId(self.next_host_id + k)))
            .collect();
        for (w, h) in &schedule.placements {
            if !self.workloads.contains_key(w) {
                return Err(SimError::UnknownWorkload(*w));
            }
            if !surviving.contains(h) {
                return Err(SimError::UnknownHost {
                    workload: *w,
                    host: *h,
                });
            }
        }

        // (a) provisions boot, (b) deallocations leave.
        for h in &mut self.hosts {
            h.pending_until = None;
        }
        let mut overhead = 0.0;
        for &v in &decision.provisions {
            let boot = catalog
                .vm_type(v)
                .provision_delay
                .sample(&mut self.rng, dt);
            overhead += boot;
            self.hosts.push(Host {
                id: HostId(self.next_host_id),
                vm_type: v,
                active_since: self.t,
                pending_until: Some(boot),
            });
            self.next_host_id += 1;
        }
        self.hosts.retain(|h| !decision.deallocations.contains(&h.id));

        // Enforce capacity under the actual demands: per host, keep
        // workloads in ascending id while they fit, queue the rest.
        let mut remaining: BTreeMap<HostId, DemandVector> = self
            .hosts
            .iter()
            .map(|h| (h.id, catalog.vm_type(h.vm_type).capacity()))
            .collect();
        let mut placed: BTreeMap<WorkloadId, HostId> = BTreeMap::new();
        for (w, h) in &schedule.placements {
            let rem = remaining.get_mut(h).expect("host checked above");
            let d = demand_of(w);
            if d.fits_within(rem) {
                *rem = *rem - d;
                placed.insert(*w, *h);
            }
        }

        let boot_of: BTreeMap<HostId, f64> = self
            .hosts
            .iter()
            .map(|h| (h.id, h.pending_until.unwrap_or(0.0)))
            .collect();
        let mut host_work: BTreeMap<HostId, f64> =
            self.hosts.iter().map(|h| (h.id, 0.0)).collect();
        let mut migrations = 0usize;
        let mut waiting_s = 0.0;
        let mut delay_fraction_sum = 0.0;
        let live_workloads = self.workloads.len();

        for (id, w) in self.workloads.iter_mut() {
            let d = demand_of(id);
            let delay = match placed.get(id) {
                Some(h) => {
                    let mut delay = boot_of[h];
                    if self.placements.get(id).is_some_and(|prev| prev != h) {
                        migrations += 1;
                        delay += d.ram / cfg.migration_rate_gb_s;
                    }
                    let delay = delay.min(dt);
                    *host_work.get_mut(h).expect("host present") += d.cpu * (dt - delay) / dt;
                    delay
                }
                None => {
                    waiting_s += dt;
                    dt
                }
            };
            w.accrued_delay += delay;
            delay_fraction_sum += delay / dt;
        }

        // Utilization over the interval: executed work over the capacity
        // available after boot.
        let mut capacity = 0.0;
        let mut work = 0.0;
        let mut energy_kwh = 0.0;
        let mut cost_usd = 0.0;
        let mut types = Vec::with_capacity(self.hosts.len());
        for h in &self.hosts {
            let vm = catalog.vm_type(h.vm_type);
            let avail = (dt - boot_of[&h.id]) / dt;
            capacity += vm.cpu_capacity * avail;
            work += host_work[&h.id];
            let util = host_work[&h.id] / vm.cpu_capacity;
            energy_kwh += vm.power_at(util) * dt / 3600.0 / 1000.0;
            cost_usd += vm.interval_cost(dt);
            types.push(h.vm_type);
        }
        let r = utilization_ratio(work, capacity);
        let cost_norm = normalized_cost(catalog, &types);
        let reference_kwh = catalog.max_hosts() as f64 * catalog.max_peak_power() * dt / 3600.0 / 1000.0;
        let q_e = if reference_kwh > 0.0 {
            (energy_kwh / reference_kwh).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // (d) completions.
        let t = self.t;
        let done: Vec<WorkloadId> = self
            .workloads
            .values()
            .filter(|w| w.final_interval() <= t)
            .map(|w| w.id)
            .collect();
        let mut response_sum_s = 0.0;
        let mut violations = 0usize;
        for id in &done {
            let w = self.workloads.remove(id).expect("live workload");
            let response = (t + 1 - w.arrival_interval) as f64 * dt + w.accrued_delay;
            response_sum_s += response;
            if response > w.sla_deadline {
                violations += 1;
            }
            placed.remove(id);
        }
        let q_r = if live_workloads > 0 {
            (delay_fraction_sum / live_workloads as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q_sla = if done.is_empty() {
            0.0
        } else {
            violations as f64 / done.len() as f64
        };

        // Queue keeps FIFO order; newly unplaced workloads join at the back.
        let mut queue: Vec<WorkloadId> = self
            .queue
            .iter()
            .filter(|w| self.workloads.contains_key(w) && !placed.contains_key(w))
            .copied()
            .collect();
        let in_queue: BTreeSet<WorkloadId> = queue.iter().copied().collect();
        queue.extend(
            self.workloads
                .keys()
                .filter(|w| !placed.contains_key(w) && !in_queue.contains(w))
                .copied(),
        );
        self.queue = queue;
        self.placements = placed;
        self.observed = self
            .workloads
            .keys()
            .map(|w| (*w, demand_of(w)))
            .collect();

        let qos = qos_score(q_e, q_r, q_sla, &cfg.weights);
        let report = QoSReport {
            t,
            r,
            cost_usd,
            cost_norm,
            energy_kwh,
            q_e,
            q_r,
            q_sla,
            qos,
            reward: reward(r, cost_norm, cfg.gamma),
            active_hosts: self.hosts.len(),
            live_workloads,
            queued: self.queue.len(),
            completed: done.len(),
            sla_violations: violations,
            response_sum_s,
            waiting_s,
            migrations,
            provisions: decision.provisions.len(),
            deallocations: decision.deallocations.len(),
            provision_overhead_s: overhead,
        };

        let l = &mut self.ledger;
        l.completed += done.len() as u64;
        l.sla_violations += violations as u64;
        l.energy_kwh += energy_kwh;
        l.cost_usd += cost_usd;
        l.response_sum_s += response_sum_s;
        l.waiting_s += waiting_s;
        l.migrations += migrations as u64;
        l.provisions += decision.provisions.len() as u64;
        l.deallocations += decision.deallocations.len() as u64;
        l.provision_overhead_s += overhead;

        self.t += 1;
        self.last_report = Some(report.clone());
        Ok(report)
    }
}
