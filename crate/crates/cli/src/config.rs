//! Experiment configuration (TOML) and the scenario it describes.

use std::path::{Path, PathBuf};

use cilp_core::cosim::{QosWeights, SimConfig};
use cilp_core::domain::{
    fitted_arrival_rate, synthesize_arrivals_at_rate, synthetic_templates, Arrival, SlaPolicy, SyntheticTraceSpec,
    VmCatalog, WorkloadTemplate,
};
use cilp_core::model::ModelConfig;
use cilp_core::provision::{ReactiveThreshold, DEFAULT_ETA};
use cilp_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::catalog::load_catalog;
use crate::error::CliError;
use crate::traces::load_traces;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProvisionerKind {
    Cilp,
    Reactive,
    Oracle,
    None,
}

impl ProvisionerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProvisionerKind::Cilp => "cilp",
            ProvisionerKind::Reactive => "reactive",
            ProvisionerKind::Oracle => "oracle",
            ProvisionerKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Labelled episodes to roll out.
    pub rollouts: usize,
    /// Seed of the first rollout; the rest follow consecutively.
    pub first_seed: u64,
    /// Intervals per rollout; the episode length when absent.
    pub intervals: Option<usize>,
    pub random_action: f64,
    /// Wall-clock budget for label generation plus fitting, seconds.
    pub budget_s: Option<f64>,
    pub model: ModelConfig,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            rollouts: 20,
            first_seed: 1000,
            intervals: None,
            random_action: 0.1,
            budget_s: None,
            model: ModelConfig::default(),
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Interval length Δ, seconds.
    pub interval_s: f64,
    /// Episode length T, intervals.
    pub intervals: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub migration_rate_gb_s: f64,
    pub seed: u64,
    /// Seeds for `compare` and `sweep-gamma`; `[seed]` when empty.
    pub seeds: Vec<u64>,
    /// Catalog file; the built-in Azure B-series catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Overrides the catalog's host cap.
    pub max_hosts: Option<usize>,
    /// Trace CSV; synthetic traces when absent.
    pub traces: Option<PathBuf>,
    pub synthetic: SyntheticTraceSpec,
    /// Arrivals per interval; fitted to the templates when absent.
    pub arrival_rate: Option<f64>,
    pub sla_multiplier: f64,
    /// VM type names of the hosts running at t = 0.
    pub initial_hosts: Vec<String>,
    pub provisioner: ProvisionerKind,
    pub checkpoint: Option<PathBuf>,
    pub reactive_hi: f64,
    pub reactive_lo: f64,
    pub oracle_depth: usize,
    pub eta: f64,
    pub gammas: Vec<f64>,
    pub compare: Vec<ProvisionerKind>,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            interval_s: 300.0,
            intervals: 200,
            gamma: 0.5,
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            delta: 1.0 / 3.0,
            migration_rate_gb_s: 1.0,
            seed: 0,
            seeds: Vec::new(),
            catalog: None,
            max_hosts: None,
            traces: None,
            synthetic: SyntheticTraceSpec::default(),
            arrival_rate: None,
            sla_multiplier: 1.5,
            initial_hosts: vec!["B2s".into(), "B2s".into()],
            provisioner: ProvisionerKind::Reactive,
            checkpoint: None,
            reactive_hi: 0.8,
            reactive_lo: 0.3,
            oracle_depth: 8,
            eta: DEFAULT_ETA,
            gammas: vec![0.0, 0.25, 0.5, 1.0],
            compare: vec![
                ProvisionerKind::None,
                ProvisionerKind::Reactive,
                ProvisionerKind::Oracle,
                ProvisionerKind::Cilp,
            ],
            train: TrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.catalog, &mut cfg.traces, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            interval_s: self.interval_s,
            gamma: self.gamma,
            weights: QosWeights {
                alpha: self.alpha,
                beta: self.beta,
                delta: self.delta,
            },
            migration_rate_gb_s: self.migration_rate_gb_s,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn reactive(&self) -> ReactiveThreshold {
        ReactiveThreshold {
            hi: self.reactive_hi,
            lo: self.reactive_lo,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.intervals == 0 {
            return bad("intervals must be at least 1");
        }
        self.sim_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.sla_multiplier.is_finite() && self.sla_multiplier > 0.0) {
            return bad("sla_multiplier must be positive");
        }
        if let Some(rate) = self.arrival_rate {
            if !(rate.is_finite() && rate >= 0.0) {
                return bad("arrival_rate must be non-negative");
            }
        }
        if !(self.reactive_lo <= self.reactive_hi) {
            return bad("reactive_lo must not exceed reactive_hi");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gammas must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.train.random_action) {
            return bad("train.random_action must lie in [0, 1]");
        }
        if self.train.rollouts == 0 {
            return bad("train.rollouts must be positive");
        }
        self.train
            .model
            .validate()
            .map_err(|e| CliError::Config(format!("train.model: {e}")))?;
        self.train
            .optimizer
            .validate()
            .map_err(|e| CliError::Config(format!("train.optimizer: {e}")))?;
        Ok(())
    }
}

/// Where workload templates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSource {
    Fixed(Vec<WorkloadTemplate>),
    /// Synthetic templates regenerated from each episode's seed.
    Synthetic(SyntheticTraceSpec),
}

/// A loaded, validated experiment: everything needed to run episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub catalog: VmCatalog,
    pub sim: SimConfig,
    pub intervals: usize,
    pub initial_hosts: Vec<usize>,
    pub templates: TemplateSource,
    pub arrival_rate: Option<f64>,
    pub sla: SlaPolicy,
    pub reactive: ReactiveThreshold,
    pub oracle_depth: usize,
    pub eta: f64,
}

impl Scenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let mut catalog = match &cfg.catalog {
            Some(p) => load_catalog(p)?,
            None => VmCatalog::azure_default(),
        };
        if let Some(m) = cfg.max_hosts {
            catalog = catalog
                .with_max_hosts(m)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let initial_hosts = cfg
            .initial_hosts
            .iter()
            .map(|n| {
                catalog
                    .index_of(n)
                    .ok_or_else(|| CliError::Config(format!("initial host type {n:?} is not in the catalog")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if initial_hosts.len() > catalog.max_hosts() {
            return Err(CliError::Config(format!(
                "{} initial hosts exceed max_hosts {}",
                initial_hosts.len(),
                catalog.max_hosts()
            )));
        }
        let templates = match &cfg.traces {
            Some(p) => {
                let t = load_traces(p)?;
                if t.is_empty() {
                    return Err(CliError::Config(format!("{}: no workloads", p.display())));
                }
                TemplateSource::Fixed(t)
            }
            None => TemplateSource::Synthetic(cfg.synthetic.clone()),
        };
        Ok(Self {
            catalog,
            sim: cfg.sim_config(),
            intervals: cfg.intervals,
            initial_hosts,
            templates,
            arrival_rate: cfg.arrival_rate,
            sla: SlaPolicy {
                multiplier: cfg.sla_multiplier,
                interval_s: cfg.interval_s,
            },
            reactive: cfg.reactive(),
            oracle_depth: cfg.oracle_depth,
            eta: cfg.eta,
        })
    }

    pub fn templates(&self, seed: u64) -> Vec<WorkloadTemplate> {
        match &self.templates {
            TemplateSource::Fixed(t) => t.clone(),
            TemplateSource::Synthetic(spec) => synthetic_templates(&SyntheticTraceSpec {
                seed: spec.seed.wrapping_add(seed),
                ..spec.clone()
            }),
        }
    }

    /// Arrival plan of the episode with `seed` over `horizon` intervals.
    pub fn arrivals(&self, seed: u64, horizon: usize) -> Vec<Arrival> {
        let templates = self.templates(seed);
        let rate = self.arrival_rate.unwrap_or_else(|| fitted_arrival_rate(&templates));
        synthesize_arrivals_at_rate(&templates, horizon, rate, seed, self.sla)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = include_str!("../../../configs/desk.toml");

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let s = Scenario::from_config(&cfg).unwrap();
        assert_eq!(s.initial_hosts, vec![0, 0]);
        assert_eq!(s.sim, SimConfig::default());
    }

    #[test]
    fn shipped_desk_config_parses() {
        let cfg: ExperimentConfig = toml::from_str(DESK).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.intervals, 50);
        assert_eq!(cfg.max_hosts, Some(20));
        assert_eq!(cfg.seeds().len(), 5);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "intervals = 0",
            "interval_s = 0.0",
            "gamma = -1.0",
            "alpha = 0.5",
            "initial_hosts = [\"B99\"]",
            "unknown_key = 1",
        ] {
            let parsed: Result<ExperimentConfig, _> = toml::from_str(text);
            let rejected = match parsed {
                Err(_) => true,
                Ok(cfg) => Scenario::from_config(&cfg).is_err(),
            };
            assert!(rejected, "{text}");
        }
    }

    #[test]
    fn arrivals_are_seeded() {
        let s = Scenario::from_config(&ExperimentConfig::default()).unwrap();
        assert_eq!(s.arrivals(4, 30), s.arrivals(4, 30));
        assert_ne!(s.arrivals(4, 30), s.arrivals(5, 30));
    }
}
