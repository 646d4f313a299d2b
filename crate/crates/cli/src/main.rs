use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mars_core::config::TrainConfig;
use mars_core::experiment;

/// Modality-adaptive flow-matching policy on a 2D navigation benchmark.
#[derive(Parser, Debug)]
#[command(name = "mars", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted demonstrations into the run directory.
    GenDemos {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a policy on the run's demonstrations.
    Train {
        /// Dataset to train on instead of `<out>/dataset.bin`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint with closed-loop rollouts.
    Eval {
        /// Checkpoint to evaluate instead of `<out>/checkpoints/final.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train fixed-noise policies over a range of noise scales.
    SweepVariance {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render figures from a run directory.
    Plot {
        /// Run directory.
        run: PathBuf,
    },
}

/// Configuration sources: defaults, then `--config`, then flags.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// mars, fm, a2a, sigma:<s> or weight:<w>.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_div: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    scheduler_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    demos: Option<usize>,
    /// Map file; `default` for the built-in map.
    #[arg(long)]
    map: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eval_rollouts: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    rollout_horizon: Option<usize>,
    #[arg(long)]
    replan_every: Option<usize>,
    /// Comma-separated noise scales for the sweep.
    #[arg(long)]
    sweep_sigmas: Option<String>,
    #[arg(long)]
    sweep_epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut flag = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overrides.push((key.to_string(), v));
            }
        };
        let s = |v: Option<usize>| v.map(|v| v.to_string());
        let f = |v: Option<f64>| v.map(|v| v.to_string());
        flag("mode", self.mode.clone());
        flag("chunk", s(self.chunk));
        flag("history", s(self.history));
        flag("k_max", s(self.k_max));
        flag("neighbors", s(self.neighbors));
        flag("lambda_rec", f(self.lambda_rec));
        flag("lambda_div", f(self.lambda_div));
        flag("batch", s(self.batch));
        flag("epochs", s(self.epochs));
        flag("lr", f(self.lr));
        flag("scheduler_lr", f(self.scheduler_lr));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("demos", s(self.demos));
        flag("map", self.map.clone());
        flag("out", self.out.as_ref().map(|p| p.display().to_string()));
        flag("eval_rollouts", s(self.eval_rollouts));
        flag("eval_seed", self.eval_seed.map(|v| v.to_string()));
        flag("rollout_horizon", s(self.rollout_horizon));
        flag("replan_every", s(self.replan_every));
        flag("sweep_sigmas", self.sweep_sigmas.clone());
        flag("sweep_epochs", s(self.sweep_epochs));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(TrainConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos { config } => {
            let cfg = config.resolve()?;
            let path = experiment::cmd_gen_demos(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train { dataset, config } => {
            let cfg = config.resolve()?;
            let outcome = experiment::cmd_train(&cfg, dataset.as_deref())?;
            if let Some(last) = outcome.log.last() {
                println!(
                    "epoch {}: total {:.5} (flow {:.5}, reconstruction {:.5}, dispersion {:.5})",
                    last.epoch, last.total, last.l_fm, last.l_rec, last.l_div
                );
            }
            println!("{}", outcome.checkpoint.display());
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.resolve()?;
            let report = experiment::cmd_eval(&cfg, checkpoint.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::SweepVariance { config } => {
            let cfg = config.resolve()?;
            let report = experiment::cmd_sweep_variance(&cfg)?;
            print!("{}", report.to_csv());
            match report.loss_rank_correlation {
                Some(r) => println!("spearman(sigma, final loss) = {r:.4}"),
                None => println!("spearman(sigma, final loss) undefined"),
            }
        }
        Command::Plot { run } => {
            for p in experiment::cmd_plot(&run)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
