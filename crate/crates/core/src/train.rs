//! Imitation learning: oracle labels from the twin, the two-head loss and
//! an AdamW loop with early stopping.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_term, AutodiffError, Graph, ModelParams, Tensor, Var};
use crate::cosim::{SimConfig, SimError, SimState};
use crate::domain::{Arrival, Demands, VmCatalog};
use crate::model::{ActionFeature, CilpModel, Snapshot};
use crate::par;
use crate::provision::{apply_action, candidates, ReactiveThreshold};
use crate::sched::{ProvisioningDecision, Scheduler};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// One supervised example: the network inputs at interval `t` and the
/// targets the twin computed for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: usize,
    pub t: usize,
    /// `(D̂_{t−1}, W_{t−1})`.
    pub snapshot: Snapshot,
    pub candidates: Vec<ActionFeature>,
    /// True `W_t` for every snapshot workload.
    pub target: Demands,
    /// `g^i ∈ {0, 1}` per candidate.
    pub labels: Vec<f64>,
}

/// An episode to roll out for label generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub seed: u64,
    pub intervals: usize,
    pub initial_hosts: Vec<usize>,
    pub arrivals: Vec<Arrival>,
}

/// How rollouts pick the actions that move the episode forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    pub policy: ReactiveThreshold,
    /// Probability of replacing the policy's decision by one uniformly
    /// drawn legal action.
    pub random_action: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Self {
            policy: ReactiveThreshold::default(),
            random_action: 0.1,
        }
    }
}

/// `g^i = 1` iff adding candidate `i` alone beats the empty decision on
/// reward in the twin; ties give 0. Both sides are scheduled and
/// simulated with `truth`.
pub fn label_candidates(
    state: &SimState,
    catalog: &VmCatalog,
    sim: &SimConfig,
    scheduler: &dyn Scheduler,
    truth: &Demands,
    cands: &[ActionFeature],
) -> Result<Vec<f64>, SimError> {
    let none = ProvisioningDecision::empty();
    let base = state
        .what_if(catalog, sim, truth, &none, &state.plan(scheduler, catalog, truth, &none))?
        .reward;
    par::map(cands, |c| {
        let trial = apply_action(&none, c.kind);
        let schedule = state.plan(scheduler, catalog, truth, &trial);
        state
            .what_if(catalog, sim, truth, &trial, &schedule)
            .map(|rep| if rep.reward > base { 1.0 } else { 0.0 })
    })
    .into_iter()
    .collect()
}

/// Rolls one episode and labels every interval.
pub fn generate_rollout(
    episode: usize,
    rollout: &Rollout,
    catalog: &VmCatalog,
    sim: &SimConfig,
    scheduler: &dyn Scheduler,
    exploration: &Exploration,
) -> Result<Vec<TrainingRow>, TrainError> {
    let mut state = SimState::with_hosts(rollout.seed, &rollout.initial_hosts);
    let mut rng = ChaCha8Rng::seed_from_u64(rollout.seed ^ 0x5eed_cafe);
    let mut rows = Vec::with_capacity(rollout.intervals);
    for t in 0..rollout.intervals {
        state.admit(
            rollout
                .arrivals
                .iter()
                .filter(|a| a.interval == t)
                .map(|a| a.workload.clone()),
        )?;
        let observed = state.observed_demands();
        let truth = state.true_demands()?;
        let cands = candidates(&state, catalog, scheduler, &observed);
        let labels = label_candidates(&state, catalog, sim, scheduler, &truth, &cands)?;
        rows.push(TrainingRow {
            episode,
            t,
            snapshot: Snapshot::of_state(&state, catalog, &observed),
            candidates: cands.clone(),
            target: truth.clone(),
            labels,
        });

        let explore = rng.random_bool(exploration.random_action.clamp(0.0, 1.0));
        let decision = if explore && !cands.is_empty() {
            let pick = cands[rng.random_range(0..cands.len())];
            apply_action(&ProvisioningDecision::empty(), pick.kind)
        } else {
            let r_prev = state.last_report().map_or(0.0, |r| r.r);
            exploration.policy.rule(&state, catalog, scheduler, &observed, r_prev)
        };
        let schedule = state.plan(scheduler, catalog, &observed, &decision);
        state.step(catalog, sim, &truth, &decision, &schedule)?;
    }
    Ok(rows)
}

/// Labels every rollout. Rollouts run in parallel; rows come back in
/// rollout order, then interval order.
pub fn generate_dataset(
    rollouts: &[Rollout],
    catalog: &VmCatalog,
    sim: &SimConfig,
    scheduler: &dyn Scheduler,
    exploration: &Exploration,
) -> Result<Vec<TrainingRow>, TrainError> {
    let indexed: Vec<(usize, &Rollout)> = rollouts.iter().enumerate().collect();
    let parts = par::map(&indexed, |(i, r)| generate_rollout(*i, r, catalog, sim, scheduler, exploration));
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

/// Mean over candidates of `−½·(g·ln l + (1−g)·ln(1−l))`, with `l`
/// clamped to `[1e-7, 1 − 1e-7]`. Zero for no candidates.
pub fn bce_loss(g: &[f64], l: &[f64]) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    g.iter().zip(l).map(|(&g, &l)| bce_term(l, g)).sum::<f64>() / g.len() as f64
}

/// `‖Ŵ − W‖² / |𝒲|` over rows of three features. Zero for no rows.
pub fn mse_loss(predicted: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    let sq: f64 = predicted
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    sq / target.len() as f64
}

/// `L = L_MSE + Σ_i L_BCE(g^i, l^i)`.
pub fn total_loss(predicted: &[[f64; 3]], target: &[[f64; 3]], g: &[f64], l: &[f64]) -> f64 {
    mse_loss(predicted, target) + bce_loss(g, l) * g.len() as f64
}

/// Builds the loss of one row on the tape, in normalized units.
pub fn row_loss(g: &mut Graph, model: &CilpModel, params: &ModelParams, row: &TrainingRow) -> Result<Var, TrainError> {
    let input = model.input(&row.snapshot, &row.candidates);
    let out = model.network.forward(g, params, &input)?;
    let s = model.scale.to_array();
    let target = Tensor::from_fn(input.workload_ids.len(), 3, |i, j| {
        let d = row.target.get(&input.workload_ids[i]).copied().unwrap_or_default();
        d.to_array()[j] / s[j]
    });
    let nw = target.rows();
    let target = g.constant(target);
    let diff = g.sub(out.demands, target)?;
    let sq = g.square(diff);
    let sum = g.sum(sq);
    let mse = g.scale(sum, if nw > 0 { 1.0 / nw as f64 } else { 0.0 });
    let bce = g.bce_sum(out.likelihoods, &row.labels)?;
    Ok(g.add(mse, bce)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of rows used for training; the rest validate.
    pub split: f64,
    /// Rows per contiguous shuffling unit.
    pub chunk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            split: 0.8,
            chunk: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::InvalidConfig("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.chunk == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size, max_epochs, patience and chunk must be positive",
            ));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(TrainError::InvalidConfig("split must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update from the gradients accumulated in `params`, divided by
    /// `grad_scale`.
    pub fn step(&mut self, params: &mut ModelParams, grad_scale: f64) {
        let grads = params.flat_grads();
        if self.m.len() != grads.len() {
            self.m = alloc::vec![0.0; grads.len()];
            self.v = alloc::vec![0.0; grads.len()];
        }
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        let values = params.flat_values();
        for (k, (&g, &x)) in grads.iter().zip(&values).enumerate() {
            let g = g / grad_scale;
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            let next = x - self.lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * x);
            params.set_flat(k, next);
        }
        params.zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean row loss over the epoch's batches, before each update.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_rows: usize,
    pub val_rows: usize,
}

/// Splits rows into contiguous chunks, shuffles the chunks and divides
/// them into training and validation sets of about `split` and
/// `1 − split` of the rows. Returns row indices.
pub fn split_rows(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(cfg.chunk).map(<[usize]>::to_vec).collect();
    chunks.shuffle(&mut rng);
    let want = libm::round(n as f64 * cfg.split) as usize;
    if chunks.len() < 2 {
        let all: Vec<usize> = chunks.into_iter().flatten().collect();
        let cut = want.clamp(usize::from(n > 1), n.saturating_sub(1).max(1)).min(n);
        return (all[..cut].to_vec(), all[cut..].to_vec());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in chunks {
        if train.len() < want && (!val.is_empty() || train.len() + c.len() < n) {
            train.extend(c);
        } else {
            val.extend(c);
        }
    }
    (train, val)
}

fn mean_loss(model: &CilpModel, rows: &[&TrainingRow]) -> Result<f64, TrainError> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let losses = par::map(rows, |row| {
        let mut g = Graph::new();
        row_loss(&mut g, model, &model.params, row).map(|l| g.value(l).data()[0])
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / rows.len() as f64)
}

/// Trains `model` in place and leaves it at its best validation epoch.
///
/// `keep_going` sees each finished epoch and may end training early, e.g.
/// on a wall-clock budget.
pub fn fit(
    model: &mut CilpModel,
    rows: &[TrainingRow],
    cfg: &TrainConfig,
    mut keep_going: impl FnMut(&EpochStats) -> bool,
) -> Result<History, TrainError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (train_idx, val_idx) = split_rows(rows.len(), cfg);
    let val: Vec<&TrainingRow> = val_idx.iter().map(|&i| &rows[i]).collect();
    let mut train_chunks: Vec<Vec<usize>> = train_idx.chunks(cfg.chunk).map(<[usize]>::to_vec).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    model.params.zero_grad();

    let mut history = History {
        train_rows: train_idx.len(),
        val_rows: val_idx.len(),
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = model.params.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        train_chunks.shuffle(&mut rng);
        let order: Vec<&TrainingRow> = train_chunks.iter().flatten().map(|&i| &rows[i]).collect();
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = par::map(batch, |row| {
                let mut g = Graph::new();
                let loss = row_loss(&mut g, model, &model.params, row)?;
                let value = g.value(loss).data()[0];
                Ok::<_, TrainError>((value, g.gradients(loss)?))
            });
            for r in results {
                let (value, grads) = r?;
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: b });
                }
                loss_sum += value;
                grads.accumulate_into(&mut model.params);
            }
            opt.step(&mut model.params, batch.len() as f64);
            if !model.params.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
        }
        let train_loss = loss_sum / order.len().max(1) as f64;
        let val_loss = if val.is_empty() { train_loss } else { mean_loss(model, &val)? };
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
        };
        history.epochs.push(stats);
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience || !keep_going(&stats) {
            break;
        }
    }
    model.params = best;
    model.params.zero_grad();
    Ok(history)
}
