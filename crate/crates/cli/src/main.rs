use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cilp::config::{ExperimentConfig, ProvisionerKind, Scenario};
use cilp::episode::{compare, provisioner_for, run_episode, sweep_gamma, Contender};
use cilp::io;
use cilp::pipeline::{build_dataset, train_from_scratch, TrainedModel};
use cilp::CliError;
use cilp_core::model::CilpModel;

#[derive(Debug, Parser)]
#[command(name = "cilp", version, about = "Cloud provisioning twin: simulate, train and compare provisioners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Episode seed; also replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cost weight γ of the reward.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Episode length in intervals.
    #[arg(long, global = true)]
    intervals: Option<usize>,
    #[arg(long, global = true, value_enum)]
    provisioner: Option<ProvisionerKind>,
    /// Model checkpoint to load (simulate, sweep-gamma), write (train), or
    /// reuse if present and otherwise write (compare).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one episode; writes metrics.csv and summary.json.
    Simulate,
    /// Generate labels and train a model; writes a checkpoint and history.csv.
    Train,
    /// Write the labelled dataset (dataset.csv and dataset.json).
    GenerateData,
    /// Run every configured provisioner over the seeds; writes comparison.csv.
    Compare,
    /// Sweep γ with one provisioner; writes sweep_gamma.csv.
    SweepGamma,
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.seeds = vec![s];
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(t) = self.intervals {
            cfg.intervals = t;
        }
        if let Some(p) = self.provisioner {
            cfg.provisioner = p;
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CILP_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("CILP_SIM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn load_model(cfg: &ExperimentConfig) -> Result<Option<(CilpModel, f64)>, CliError> {
    cfg.checkpoint.as_deref().map(io::load_checkpoint).transpose()
}

fn train(scn: &Scenario, cfg: &ExperimentConfig) -> Result<TrainedModel, CliError> {
    let (rows, trained) = train_from_scratch(scn, &cfg.train, |e| {
        eprintln!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    })?;
    eprintln!(
        "{} rows, best epoch {} (val {:.5}), {:.1}s",
        rows.len(),
        trained.history.best_epoch,
        trained.history.best_val_loss,
        trained.train_time_s
    );
    Ok(trained)
}

fn simulate(cfg: &ExperimentConfig, scn: &Scenario, out: &Path) -> Result<(), CliError> {
    let model = match cfg.provisioner {
        ProvisionerKind::Cilp => load_model(cfg)?,
        _ => None,
    };
    let mut p = provisioner_for(cfg.provisioner, scn, model.as_ref().map(|(m, _)| m))?;
    let ep = run_episode(scn, cfg.seed, p.as_mut())?;
    io::write_metrics(&out.join("metrics.csv"), &ep.rows())?;
    io::write_json(&out.join("summary.json"), &ep.summary)?;
    let s = &ep.summary;
    println!(
        "{} seed {}: r {:.4}  cost {:.4} USD  qos {:.4}  reward {:.4}",
        s.provisioner, s.seed, s.mean_r, s.mean_cost_usd, s.mean_qos, s.mean_reward
    );
    Ok(())
}

fn run_compare(cfg: &ExperimentConfig, scn: &Scenario, out: &Path) -> Result<(), CliError> {
    let mut model = None;
    if cfg.compare.contains(&ProvisionerKind::Cilp) {
        // A configured checkpoint is reused when present; otherwise a model
        // is trained and saved there (or in the output directory).
        let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
        model = Some(if path.exists() {
            io::load_checkpoint(&path)?
        } else {
            let t = train(scn, cfg)?;
            io::save_checkpoint(&path, &t.model, t.train_time_s)?;
            eprintln!("checkpoint written to {}", path.display());
            (t.model, t.train_time_s)
        });
    }
    let contenders: Vec<Contender<'_>> = cfg
        .compare
        .iter()
        .map(|&kind| match (kind, &model) {
            (ProvisionerKind::Cilp, Some((m, time))) => Contender {
                kind,
                model: Some(m),
                train_time_s: *time,
            },
            _ => Contender {
                kind,
                model: None,
                train_time_s: 0.0,
            },
        })
        .collect();
    let rows = compare(scn, &contenders, &cfg.seeds())?;
    io::write_csv(&out.join("comparison.csv"), &rows)?;
    println!("provisioner  episodes  r                cost (USD)       qos              reward           train (s)");
    for r in &rows {
        println!(
            "{:<12} {:>8}  {:.4} ± {:.4}  {:.4} ± {:.4}  {:.4} ± {:.4}  {:.4} ± {:.4}  {:.1}",
            r.provisioner,
            r.episodes,
            r.r_mean,
            r.r_std,
            r.cost_mean,
            r.cost_std,
            r.qos_mean,
            r.qos_std,
            r.reward_mean,
            r.reward_std,
            r.train_time_s
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = cli.experiment()?;
    let scn = Scenario::from_config(&cfg)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => simulate(&cfg, &scn, out),
        Command::Train => {
            let t = train(&scn, &cfg)?;
            let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
            io::save_checkpoint(&path, &t.model, t.train_time_s)?;
            io::write_history(&out.join("history.csv"), &t.history)?;
            println!("checkpoint written to {}", path.display());
            Ok(())
        }
        Command::GenerateData => {
            let rows = build_dataset(&scn, &cfg.train)?;
            io::write_dataset(&out.join("dataset"), &rows)?;
            println!("{} rows written to {}", rows.len(), out.join("dataset.csv").display());
            Ok(())
        }
        Command::Compare => run_compare(&cfg, &scn, out),
        Command::SweepGamma => {
            let model = match cfg.provisioner {
                ProvisionerKind::Cilp => load_model(&cfg)?,
                _ => None,
            };
            let contender = Contender {
                kind: cfg.provisioner,
                model: model.as_ref().map(|(m, _)| m),
                train_time_s: 0.0,
            };
            let rows = sweep_gamma(&scn, contender, &cfg.gammas, &cfg.seeds())?;
            io::write_csv(&out.join("sweep_gamma.csv"), &rows)?;
            println!("gamma   r       cost_usd  qos     reward");
            for r in &rows {
                println!("{:<7} {:.4}  {:.4}    {:.4}  {:.4}", r.gamma, r.r, r.cost_usd, r.qos, r.reward);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
