//! Experiment front end: train-boost, train-e2e, eval, diagnose.
//!
//! Exit codes: 0 success, 1 user error (bad config/arguments/input files),
//! 2 runtime failure (oracle divergence, numerical breakdown, inconsistent
//! artifacts).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use boostresnet::boost::AlphaMode;
use boostresnet::error::Error;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "boostresnet", version, about = "Sequential residual-network training via telescoping-sum boosting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory (BOOSTRESNET_OUT_DIR also applies).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the depth cap.
    #[arg(long)]
    t_max: Option<i64>,
    /// Override the block hidden width.
    #[arg(long)]
    k: Option<usize>,
    /// Override oracle epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the oracle learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Override the stopping threshold on gamma.
    #[arg(long)]
    gamma_threshold: Option<f64>,
    /// Override the alpha selection rule (line_search | closed_form).
    #[arg(long)]
    alpha_mode: Option<String>,
    /// Record measured per-round wallclock in rounds.csv (breaks
    /// byte-identical reruns).
    #[arg(long)]
    measured_wallclock: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Ok(dir) = std::env::var("BOOSTRESNET_OUT_DIR") {
            cfg.out_dir = PathBuf::from(dir);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.t_max {
            cfg.arch.t_max = t;
        }
        if let Some(k) = self.k {
            cfg.arch.k = k;
        }
        if let Some(e) = self.epochs {
            cfg.oracle.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.oracle.learning_rate = lr;
        }
        if let Some(g) = self.gamma_threshold {
            cfg.boost.gamma_threshold = g;
        }
        if let Some(mode) = &self.alpha_mode {
            cfg.boost.alpha_mode = match mode.as_str() {
                "line_search" => AlphaMode::LineSearch,
                "closed_form" => AlphaMode::ClosedForm,
                other => {
                    return Err(Error::Config(format!(
                        "alpha_mode must be 'line_search' or 'closed_form', got '{other}'"
                    )))
                }
            };
        }
        if self.measured_wallclock {
            cfg.measured_wallclock = true;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network block by block with the boosting loop.
    TrainBoost(ConfigArgs),
    /// Train the same architecture end to end (the backprop baseline).
    TrainE2e(ConfigArgs),
    /// Evaluate a serialized model on the config's dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify a finished run's metric files.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Format { .. } | Error::Json(_) | Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainBoost(args) => args.resolve().and_then(|cfg| commands::cmd_train_boost(&cfg)),
        Command::TrainE2e(args) => args.resolve().and_then(|cfg| commands::cmd_train_e2e(&cfg)),
        Command::Eval { model, config } => config
            .resolve()
            .and_then(|cfg| commands::cmd_eval(model, &cfg)),
        Command::Diagnose { run } => commands::cmd_diagnose(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
