//! Label generation and training as driven by an experiment config.

use std::time::Instant;

use cilp_core::model::CilpModel;
use cilp_core::sched::BestFitDecreasing;
use cilp_core::train::{fit, generate_dataset, EpochStats, Exploration, History, Rollout, TrainingRow};

use crate::config::{Scenario, TrainSection};
use crate::error::CliError;

/// Training episodes: seeds `first_seed..first_seed + rollouts`, disjoint
/// from evaluation seeds as long as those stay below `first_seed`.
pub fn rollouts(scn: &Scenario, train: &TrainSection) -> Vec<Rollout> {
    let intervals = train.intervals.unwrap_or(scn.intervals);
    (0..train.rollouts as u64)
        .map(|i| {
            let seed = train.first_seed + i;
            Rollout {
                seed,
                intervals,
                initial_hosts: scn.initial_hosts.clone(),
                arrivals: scn.arrivals(seed, intervals),
            }
        })
        .collect()
}

pub fn build_dataset(scn: &Scenario, train: &TrainSection) -> Result<Vec<TrainingRow>, CliError> {
    let exploration = Exploration {
        policy: scn.reactive,
        random_action: train.random_action,
    };
    Ok(generate_dataset(
        &rollouts(scn, train),
        &scn.catalog,
        &scn.sim,
        &BestFitDecreasing,
        &exploration,
    )?)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: CilpModel,
    pub history: History,
    /// Label generation plus fitting, seconds.
    pub train_time_s: f64,
}

/// Fits a fresh model on `rows`. `started` is when label generation began,
/// so that the budget covers both phases. Training stops before an epoch
/// that would overrun the budget, judged by the previous epoch's length.
pub fn train_model(
    scn: &Scenario,
    train: &TrainSection,
    rows: &[TrainingRow],
    started: Instant,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel, CliError> {
    let mut model = CilpModel::new(train.model, &scn.catalog, train.optimizer.seed)?;
    let mut last = Instant::now();
    let history = fit(&mut model, rows, &train.optimizer, |e| {
        on_epoch(e);
        let epoch_s = last.elapsed().as_secs_f64();
        last = Instant::now();
        train
            .budget_s
            .is_none_or(|b| started.elapsed().as_secs_f64() + epoch_s <= b)
    })?;
    Ok(TrainedModel {
        model,
        history,
        train_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Label generation followed by training.
pub fn train_from_scratch(
    scn: &Scenario,
    train: &TrainSection,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Vec<TrainingRow>, TrainedModel), CliError> {
    let started = Instant::now();
    let rows = build_dataset(scn, train)?;
    let trained = train_model(scn, train, &rows, started, on_epoch)?;
    Ok((rows, trained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use cilp_core::model::ModelConfig;
    use cilp_core::train::TrainConfig;

    fn tiny() -> (Scenario, TrainSection) {
        let cfg = ExperimentConfig {
            intervals: 6,
            max_hosts: Some(6),
            arrival_rate: Some(1.0),
            ..ExperimentConfig::default()
        };
        let train = TrainSection {
            rollouts: 2,
            model: ModelConfig {
                width: 8,
                heads: 2,
                hidden: 8,
                ..ModelConfig::default()
            },
            optimizer: TrainConfig {
                max_epochs: 3,
                chunk: 3,
                ..TrainConfig::default()
            },
            ..TrainSection::default()
        };
        (Scenario::from_config(&cfg).unwrap(), train)
    }

    #[test]
    fn rollouts_use_training_seeds() {
        let (scn, train) = tiny();
        let r = rollouts(&scn, &train);
        assert_eq!(r.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1000, 1001]);
        assert!(r.iter().all(|r| r.intervals == 6));
    }

    #[test]
    fn trains_end_to_end() {
        let (scn, train) = tiny();
        let mut seen = 0;
        let (rows, trained) = train_from_scratch(&scn, &train, |_| seen += 1).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(seen, trained.history.epochs.len());
        assert!(trained.history.epochs.len() <= 3);
        assert!(trained.model.params.is_finite());
    }

    #[test]
    fn zero_budget_stops_after_one_epoch() {
        let (scn, mut train) = tiny();
        train.budget_s = Some(0.0);
        let (_, trained) = train_from_scratch(&scn, &train, |_| {}).unwrap();
        assert_eq!(trained.history.epochs.len(), 1);
    }
}
