//! Provisioners: the two-phase imitation loop and its comparators.

use alloc::string::String;
use alloc::vec::Vec;

use crate::cosim::{SimConfig, SimError, SimState};
use crate::domain::{Demands, HostId, VmCatalog};
use crate::model::{ActionFeature, ActionKind, Snapshot};
use crate::par;
use crate::sched::{ProvisioningDecision, Schedule, Scheduler};

/// Minimum score gain for the decision loops to accept another action.
pub const DEFAULT_ETA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProvisionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("the {0} provisioner needs the true next-interval demands")]
    MissingLookahead(&'static str),
}

/// Everything a provisioner may look at when deciding `P_t`.
#[derive(Clone, Copy)]
pub struct DecisionContext<'a> {
    pub state: &'a SimState,
    pub catalog: &'a VmCatalog,
    pub sim: &'a SimConfig,
    pub scheduler: &'a dyn Scheduler,
    /// `W_{t−1}`.
    pub observed: &'a Demands,
    /// True `W_t`. Only the oracle reads it.
    pub lookahead: Option<&'a Demands>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub decision: ProvisioningDecision,
    pub schedule: Schedule,
    /// `Ŵ_t` when the provisioner forecasts demands.
    pub predicted: Option<Demands>,
    /// Scores of the incumbent after each acceptance, starting with the
    /// empty decision.
    pub accepted_scores: Vec<f64>,
    /// Inner-loop iterations run.
    pub iterations: usize,
}

impl Outcome {
    fn simple(decision: ProvisioningDecision, schedule: Schedule) -> Self {
        Self {
            decision,
            schedule,
            predicted: None,
            accepted_scores: Vec::new(),
            iterations: 0,
        }
    }
}

/// `f^prov`: decides `P_t` and `D̂_t` for the coming interval.
pub trait Provisioner {
    fn name(&self) -> String;
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Outcome, ProvisionError>;
}

/// Legal single actions on top of `decision`: one deallocation per
/// surviving original host and one provision per catalog type.
///
/// Provisions are dropped at the host cap; deallocating the last host is
/// dropped while workloads remain. Deallocation features are computed from
/// `placements` and `demands`.
pub fn candidates_for(
    state: &SimState,
    catalog: &VmCatalog,
    scheduler: &dyn Scheduler,
    decision: &ProvisioningDecision,
    snapshot: &Snapshot,
) -> Vec<ActionFeature> {
    let mut out = Vec::new();
    let hosts_now = decision.resulting_hosts(state.hosts().len());
    let live = !state.workloads().is_empty();
    let demands = snapshot.demands();
    if hosts_now > 1 || !live {
        for (i, slot) in snapshot.hosts.iter().enumerate() {
            let original = state.hosts().iter().any(|h| h.id == slot.id);
            if original
                && !decision.deallocations.contains(&slot.id)
                && can_release(state, catalog, scheduler, &demands, decision, slot.id)
            {
                out.push(ActionFeature {
                    kind: ActionKind::Deallocate(slot.id),
                    features: snapshot.host_feature(i, catalog),
                });
            }
        }
    }
    if hosts_now < catalog.max_hosts() {
        for (v, vm) in catalog.vm_types().iter().enumerate() {
            out.push(ActionFeature {
                kind: ActionKind::Provision(v),
                features: [0.0, 0.0, 0.0, vm.cpu_capacity, vm.ram_capacity, vm.disk_capacity],
            });
        }
    }
    out
}

/// True when every workload on `host` (and on hosts already released by
/// `decision`) finds a new placement once `host` is released too.
pub fn can_release(
    state: &SimState,
    catalog: &VmCatalog,
    scheduler: &dyn Scheduler,
    demands: &Demands,
    decision: &ProvisioningDecision,
    host: HostId,
) -> bool {
    let trial = decision.clone().with_deallocation(host);
    let plan = state.plan(scheduler, catalog, demands, &trial);
    state
        .placements()
        .iter()
        .filter(|(_, h)| trial.deallocations.contains(h))
        .all(|(w, _)| plan.placements.contains_key(w))
}

/// Candidates for the state as it stands, with `H^i_{t−1}` features.
pub fn candidates(
    state: &SimState,
    catalog: &VmCatalog,
    scheduler: &dyn Scheduler,
    observed: &Demands,
) -> Vec<ActionFeature> {
    let snapshot = Snapshot::of_state(state, catalog, observed);
    candidates_for(state, catalog, scheduler, &ProvisioningDecision::empty(), &snapshot)
}

pub fn apply_action(decision: &ProvisioningDecision, action: ActionKind) -> ProvisioningDecision {
    let d = decision.clone();
    match action {
        ActionKind::Deallocate(h) => d.with_deallocation(h),
        ActionKind::Provision(v) => d.with_provision(v),
    }
}

/// The learned half of the two-phase loop.
pub trait ProvisionModel {
    /// Phase 1: `Ŵ_t` from `(D̂_{t−1}, W_{t−1})`, one row per snapshot workload.
    fn predict_demands(&self, snapshot: &Snapshot) -> Demands;
    /// Phase 2: likelihood `l^i ∈ (0, 1)` per candidate.
    fn likelihoods(&self, snapshot: &Snapshot, candidates: &[ActionFeature]) -> Vec<f64>;
}

impl<M: ProvisionModel + ?Sized> ProvisionModel for &M {
    fn predict_demands(&self, snapshot: &Snapshot) -> Demands {
        (**self).predict_demands(snapshot)
    }

    fn likelihoods(&self, snapshot: &Snapshot, candidates: &[ActionFeature]) -> Vec<f64> {
        (**self).likelihoods(snapshot, candidates)
    }
}

/// Two-phase inference.
///
/// Phase 1 forecasts `Ŵ_t`. Phase 2 starts from the empty decision and
/// repeatedly adds the highest-likelihood candidate, re-plans, and keeps
/// it only if the twin's QoS score rises by at least `eta`. The first
/// rejection ends the loop, and at most `|ℋ| + |𝒱|` candidates are tried.
pub fn cilp_decide(
    model: &dyn ProvisionModel,
    ctx: &DecisionContext<'_>,
    eta: f64,
) -> Result<Outcome, ProvisionError> {
    let DecisionContext {
        state,
        catalog,
        sim,
        scheduler,
        observed,
        ..
    } = *ctx;

    let before = Snapshot::of_state(state, catalog, observed);
    let predicted: Demands = model
        .predict_demands(&before)
        .into_iter()
        .map(|(w, d)| (w, d.clamp_non_negative()))
        .collect();

    let mut decision = ProvisioningDecision::empty();
    let mut schedule = state.plan(scheduler, catalog, &predicted, &decision);
    let mut incumbent = state
        .what_if(catalog, sim, &predicted, &decision, &schedule)?
        .qos;
    let mut accepted = alloc::vec![incumbent];

    let budget = state.hosts().len() + catalog.len();
    let mut iterations = 0;
    while iterations < budget {
        let snapshot = Snapshot::new(
            state.hosts_after(&decision, catalog),
            &predicted,
            schedule.placements.clone(),
        );
        let cands = candidates_for(state, catalog, scheduler, &decision, &snapshot);
        if cands.is_empty() {
            break;
        }
        iterations += 1;
        let scores = model.likelihoods(&snapshot, &cands);
        let best = argmax(&scores);
        let trial = apply_action(&decision, cands[best].kind);
        let trial_schedule = state.plan(scheduler, catalog, &predicted, &trial);
        let q = state
            .what_if(catalog, sim, &predicted, &trial, &trial_schedule)?
            .qos;
        if q >= incumbent + eta {
            decision = trial;
            schedule = trial_schedule;
            incumbent = q;
            accepted.push(q);
        } else {
            break;
        }
    }

    Ok(Outcome {
        decision,
        schedule,
        predicted: Some(predicted),
        accepted_scores: accepted,
        iterations,
    })
}

/// First index of the maximum; NaN scores never win.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Wraps a [`ProvisionModel`] as a [`Provisioner`].
pub struct CilpProvisioner<M> {
    pub model: M,
    pub eta: f64,
}

impl<M: ProvisionModel> CilpProvisioner<M> {
    pub fn new(model: M) -> Self {
        Self {
            model,
            eta: DEFAULT_ETA,
        }
    }
}

impl<M: ProvisionModel> Provisioner for CilpProvisioner<M> {
    fn name(&self) -> String {
        "cilp".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Outcome, ProvisionError> {
        cilp_decide(&self.model, ctx, self.eta)
    }
}

/// Keeps the fleet as is.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProvisioner;

impl Provisioner for NoProvisioner {
    fn name(&self) -> String {
        "none".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Outcome, ProvisionError> {
        let decision = ProvisioningDecision::empty();
        let schedule = ctx
            .state
            .plan(ctx.scheduler, ctx.catalog, ctx.observed, &decision);
        Ok(Outcome::simple(decision, schedule))
    }
}

/// Threshold autoscaler on the previous interval's utilization ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactiveThreshold {
    pub hi: f64,
    pub lo: f64,
}

impl Default for ReactiveThreshold {
    fn default() -> Self {
        Self { hi: 0.8, lo: 0.3 }
    }
}

impl ReactiveThreshold {
    /// The rule itself, given `r_{t−1}`.
    ///
    /// Above `hi`: provision the cheapest type whose cpu covers the deficit
    /// to bring `r` back to `hi` (the largest type if none does). Below
    /// `lo`: release the host with the least placed cpu among those whose
    /// workloads can move elsewhere. A fleet with no hosts but live
    /// workloads counts as overloaded.
    pub fn rule(
        &self,
        state: &SimState,
        catalog: &VmCatalog,
        scheduler: &dyn Scheduler,
        observed: &Demands,
        r_prev: f64,
    ) -> ProvisioningDecision {
        let hosts = state.host_slots(catalog);
        let live = !state.workloads().is_empty();
        let at_cap = hosts.len() >= catalog.max_hosts();
        if hosts.is_empty() {
            if live && !at_cap {
                return ProvisioningDecision::empty().with_provision(cheapest_covering(catalog, 0.0));
            }
            return ProvisioningDecision::empty();
        }
        if r_prev > self.hi && !at_cap {
            let capacity: f64 = hosts.iter().map(|h| h.capacity.cpu).sum();
            let deficit = capacity * (r_prev / self.hi - 1.0);
            return ProvisioningDecision::empty().with_provision(cheapest_covering(catalog, deficit));
        }
        if r_prev < self.lo && (hosts.len() > 1 || !live) {
            let none = ProvisioningDecision::empty();
            let emptiest = hosts
                .iter()
                .filter(|h| can_release(state, catalog, scheduler, observed, &none, h.id))
                .map(|h| {
                    let used: f64 = state
                        .placements()
                        .iter()
                        .filter(|(_, p)| **p == h.id)
                        .map(|(w, _)| observed.get(w).map_or(0.0, |d| d.cpu))
                        .sum();
                    (used, h.id)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id);
            if let Some(h) = emptiest {
                return ProvisioningDecision::empty().with_deallocation(h);
            }
        }
        ProvisioningDecision::empty()
    }
}

/// Cheapest type with at least `cpu` capacity, else the largest one.
fn cheapest_covering(catalog: &VmCatalog, cpu: f64) -> usize {
    let types = catalog.vm_types();
    let covering = (0..types.len())
        .filter(|&v| types[v].cpu_capacity >= cpu)
        .min_by(|&a, &b| types[a].cost_per_hour.total_cmp(&types[b].cost_per_hour));
    covering.unwrap_or_else(|| {
        (0..types.len())
            .max_by(|&a, &b| types[a].cpu_capacity.total_cmp(&types[b].cpu_capacity))
            .expect("non-empty catalog")
    })
}

impl Provisioner for ReactiveThreshold {
    fn name(&self) -> String {
        "reactive".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Outcome, ProvisionError> {
        let r_prev = ctx.state.last_report().map_or(0.0, |r| r.r);
        let decision = self.rule(ctx.state, ctx.catalog, ctx.scheduler, ctx.observed, r_prev);
        let schedule = ctx
            .state
            .plan(ctx.scheduler, ctx.catalog, ctx.observed, &decision);
        Ok(Outcome::simple(decision, schedule))
    }
}

/// Greedy search with the true next-interval demands: each step tries
/// every legal single action in the twin and keeps the best one if it
/// raises the reward by at least `eta`.
pub fn oracle_decide(
    ctx: &DecisionContext<'_>,
    truth: &Demands,
    depth: usize,
    eta: f64,
) -> Result<Outcome, ProvisionError> {
    let DecisionContext {
        state,
        catalog,
        sim,
        scheduler,
        ..
    } = *ctx;
    let mut decision = ProvisioningDecision::empty();
    let mut schedule = state.plan(scheduler, catalog, truth, &decision);
    let mut incumbent = state.what_if(catalog, sim, truth, &decision, &schedule)?.reward;
    let mut accepted = alloc::vec![incumbent];
    let mut iterations = 0;

    while iterations < depth {
        let snapshot = Snapshot::new(
            state.hosts_after(&decision, catalog),
            truth,
            schedule.placements.clone(),
        );
        let cands = candidates_for(state, catalog, scheduler, &decision, &snapshot);
        if cands.is_empty() {
            break;
        }
        iterations += 1;
        let trials: Vec<ProvisioningDecision> =
            cands.iter().map(|c| apply_action(&decision, c.kind)).collect();
        let evaluated = par::map(&trials, |trial| {
            let sched = state.plan(scheduler, catalog, truth, trial);
            state
                .what_if(catalog, sim, truth, trial, &sched)
                .map(|rep| (rep.reward, sched))
        });
        let mut best: Option<(usize, f64)> = None;
        for (i, res) in evaluated.iter().enumerate() {
            let reward = match res {
                Ok((reward, _)) => *reward,
                Err(e) => return Err(e.clone().into()),
            };
            if best.is_none_or(|(_, b)| reward > b) {
                best = Some((i, reward));
            }
        }
        match best {
            Some((i, reward)) if reward >= incumbent + eta => {
                decision = trials[i].clone();
                schedule = evaluated[i].as_ref().expect("checked").1.clone();
                incumbent = reward;
                accepted.push(reward);
            }
            _ => break,
        }
    }

    Ok(Outcome {
        decision,
        schedule,
        predicted: None,
        accepted_scores: accepted,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleProvisioner {
    pub depth: usize,
    pub eta: f64,
}

impl Default for OracleProvisioner {
    fn default() -> Self {
        Self {
            depth: 8,
            eta: DEFAULT_ETA,
        }
    }
}

impl Provisioner for OracleProvisioner {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Outcome, ProvisionError> {
        let truth = ctx
            .lookahead
            .ok_or(ProvisionError::MissingLookahead("oracle"))?;
        oracle_decide(ctx, truth, self.depth, self.eta)
    }
}
