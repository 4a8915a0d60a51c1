//! The per-interval control loop and multi-episode comparisons.

use std::time::Instant;

use cilp_core::cosim::{QoSReport, SimState};
use cilp_core::model::CilpModel;
use cilp_core::provision::{
    CilpProvisioner, DecisionContext, NoProvisioner, OracleProvisioner, Provisioner,
};
use cilp_core::sched::BestFitDecreasing;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProvisionerKind, Scenario};
use crate::error::CliError;

/// One line of the per-interval metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub t: usize,
    pub r: f64,
    pub cost_usd: f64,
    pub q_e: f64,
    pub q_r: f64,
    pub q_sla: f64,
    pub qos: f64,
    pub reward: f64,
    pub active_hosts: usize,
    pub live_workloads: usize,
    pub migrations: usize,
    pub provisions: usize,
    pub deallocations: usize,
}

impl From<&QoSReport> for IntervalRow {
    fn from(r: &QoSReport) -> Self {
        Self {
            t: r.t,
            r: r.r,
            cost_usd: r.cost_usd,
            q_e: r.q_e,
            q_r: r.q_r,
            q_sla: r.q_sla,
            qos: r.qos,
            reward: r.reward,
            active_hosts: r.active_hosts,
            live_workloads: r.live_workloads,
            migrations: r.migrations,
            provisions: r.provisions,
            deallocations: r.deallocations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub provisioner: String,
    pub seed: u64,
    pub intervals: usize,
    pub gamma: f64,
    pub mean_r: f64,
    pub mean_cost_usd: f64,
    pub total_cost_usd: f64,
    pub mean_qos: f64,
    pub mean_reward: f64,
    pub mean_active_hosts: f64,
    pub migrations: usize,
    pub provisions: usize,
    pub deallocations: usize,
    pub total_energy_kwh: f64,
    /// Mean response time of completed workloads, seconds.
    pub mean_response_s: f64,
    /// SLA violations over completions.
    pub sla_fraction: f64,
    pub completed: u64,
    pub provisioning_overhead_s: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub reports: Vec<QoSReport>,
    pub summary: EpisodeSummary,
}

impl Episode {
    pub fn rows(&self) -> Vec<IntervalRow> {
        self.reports.iter().map(IntervalRow::from).collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Builds the summary from the rows alone plus the state's cumulative
/// ledger, so every row-derived field is an exact aggregate of the CSV.
pub fn summarize(
    provisioner: &str,
    seed: u64,
    gamma: f64,
    rows: &[IntervalRow],
    state: &SimState,
    wall_time_s: f64,
) -> EpisodeSummary {
    let l = state.ledger();
    EpisodeSummary {
        provisioner: provisioner.into(),
        seed,
        intervals: rows.len(),
        gamma,
        mean_r: mean(rows.iter().map(|r| r.r)),
        mean_cost_usd: mean(rows.iter().map(|r| r.cost_usd)),
        total_cost_usd: rows.iter().map(|r| r.cost_usd).sum(),
        mean_qos: mean(rows.iter().map(|r| r.qos)),
        mean_reward: mean(rows.iter().map(|r| r.reward)),
        mean_active_hosts: mean(rows.iter().map(|r| r.active_hosts as f64)),
        migrations: rows.iter().map(|r| r.migrations).sum(),
        provisions: rows.iter().map(|r| r.provisions).sum(),
        deallocations: rows.iter().map(|r| r.deallocations).sum(),
        total_energy_kwh: l.energy_kwh,
        mean_response_s: if l.completed > 0 {
            l.response_sum_s / l.completed as f64
        } else {
            0.0
        },
        sla_fraction: if l.completed > 0 {
            l.sla_violations as f64 / l.completed as f64
        } else {
            0.0
        },
        completed: l.completed,
        provisioning_overhead_s: l.provision_overhead_s,
        wall_time_s,
    }
}

/// Runs `T` intervals: admit arrivals, decide, step the twin with the
/// true demands.
pub fn run_episode(scn: &Scenario, seed: u64, provisioner: &mut dyn Provisioner) -> Result<Episode, CliError> {
    let start = Instant::now();
    let arrivals = scn.arrivals(seed, scn.intervals);
    let mut state = SimState::with_hosts(seed, &scn.initial_hosts);
    let mut reports = Vec::with_capacity(scn.intervals);
    let mut next = 0;
    for t in 0..scn.intervals {
        let begin = next;
        while next < arrivals.len() && arrivals[next].interval == t {
            next += 1;
        }
        state.admit(arrivals[begin..next].iter().map(|a| a.workload.clone()))?;
        let observed = state.observed_demands();
        let truth = state.true_demands()?;
        let ctx = DecisionContext {
            state: &state,
            catalog: &scn.catalog,
            sim: &scn.sim,
            scheduler: &BestFitDecreasing,
            observed: &observed,
            lookahead: Some(&truth),
        };
        let out = provisioner.decide(&ctx)?;
        reports.push(state.step(&scn.catalog, &scn.sim, &truth, &out.decision, &out.schedule)?);
    }
    let rows: Vec<IntervalRow> = reports.iter().map(IntervalRow::from).collect();
    let summary = summarize(
        &provisioner.name(),
        seed,
        scn.sim.gamma,
        &rows,
        &state,
        start.elapsed().as_secs_f64(),
    );
    Ok(Episode { reports, summary })
}

/// Instantiates a provisioner. `cilp` needs a model.
pub fn provisioner_for<'m>(
    kind: ProvisionerKind,
    scn: &Scenario,
    model: Option<&'m CilpModel>,
) -> Result<Box<dyn Provisioner + 'm>, CliError> {
    Ok(match kind {
        ProvisionerKind::None => Box::new(NoProvisioner),
        ProvisionerKind::Reactive => Box::new(scn.reactive),
        ProvisionerKind::Oracle => Box::new(OracleProvisioner {
            depth: scn.oracle_depth,
            eta: scn.eta,
        }),
        ProvisionerKind::Cilp => {
            let model =
                model.ok_or_else(|| CliError::Config("the cilp provisioner needs a --checkpoint".into()))?;
            let mut p = CilpProvisioner::new(model);
            p.eta = scn.eta;
            Box::new(p)
        }
    })
}

/// One contender of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct Contender<'m> {
    pub kind: ProvisionerKind,
    pub model: Option<&'m CilpModel>,
    /// Reported in the table; zero for untrained provisioners.
    pub train_time_s: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs.iter().copied());
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub provisioner: String,
    pub episodes: usize,
    pub r_mean: f64,
    pub r_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub qos_mean: f64,
    pub qos_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub train_time_s: f64,
}

/// Runs every contender on every seed (in parallel) and aggregates
/// per-episode means over seeds. Cost is the mean per-interval USD.
pub fn compare(scn: &Scenario, contenders: &[Contender<'_>], seeds: &[u64]) -> Result<Vec<ComparisonRow>, CliError> {
    let jobs: Vec<(usize, u64)> = (0..contenders.len())
        .flat_map(|c| seeds.iter().map(move |s| (c, *s)))
        .collect();
    let episodes: Vec<Result<EpisodeSummary, CliError>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let mut p = provisioner_for(contenders[c].kind, scn, contenders[c].model)?;
            Ok(run_episode(scn, seed, p.as_mut())?.summary)
        })
        .collect();
    let episodes = episodes.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(contenders
        .iter()
        .enumerate()
        .map(|(c, who)| {
            let mine: Vec<&EpisodeSummary> = jobs
                .iter()
                .zip(&episodes)
                .filter(|((k, _), _)| *k == c)
                .map(|(_, e)| e)
                .collect();
            let col = |f: fn(&EpisodeSummary) -> f64| mean_std(&mine.iter().map(|e| f(e)).collect::<Vec<_>>());
            let (r_mean, r_std) = col(|e| e.mean_r);
            let (cost_mean, cost_std) = col(|e| e.mean_cost_usd);
            let (qos_mean, qos_std) = col(|e| e.mean_qos);
            let (reward_mean, reward_std) = col(|e| e.mean_reward);
            ComparisonRow {
                provisioner: who.kind.as_str().into(),
                episodes: mine.len(),
                r_mean,
                r_std,
                cost_mean,
                cost_std,
                qos_mean,
                qos_std,
                reward_mean,
                reward_std,
                train_time_s: who.train_time_s,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub r: f64,
    pub cost_usd: f64,
    pub cost_norm: f64,
    pub qos: f64,
    pub reward: f64,
}

/// Per-γ means over all intervals of all seeds.
pub fn sweep_gamma(
    scn: &Scenario,
    contender: Contender<'_>,
    gammas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, CliError> {
    let jobs: Vec<(f64, u64)> = gammas
        .iter()
        .flat_map(|g| seeds.iter().map(move |s| (*g, *s)))
        .collect();
    let runs: Vec<Result<Vec<QoSReport>, CliError>> = jobs
        .par_iter()
        .map(|&(gamma, seed)| {
            let mut s = scn.clone();
            s.sim.gamma = gamma;
            let mut p = provisioner_for(contender.kind, &s, contender.model)?;
            Ok(run_episode(&s, seed, p.as_mut())?.reports)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(gammas
        .iter()
        .map(|&gamma| {
            let reports: Vec<&QoSReport> = jobs
                .iter()
                .zip(&runs)
                .filter(|((g, _), _)| *g == gamma)
                .flat_map(|(_, r)| r.iter())
                .collect();
            SweepRow {
                gamma,
                r: mean(reports.iter().map(|r| r.r)),
                cost_usd: mean(reports.iter().map(|r| r.cost_usd)),
                cost_norm: mean(reports.iter().map(|r| r.cost_norm)),
                qos: mean(reports.iter().map(|r| r.qos)),
                reward: mean(reports.iter().map(|r| r.reward)),
            }
        })
        .collect())
}
