//! `rte` binary: train spiking classifiers with ensemble/AT/TRADES/clean
//! objectives, evaluate robustness, export transferability matrices and
//! loss-surface grids.
//!
//! Exit codes: 0 success, 1 config error, 2 I/O error, 3 runtime contract
//! violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{dispatch, Command};
use config::PartialConfig;
use rte_core::error::Error;

#[derive(Parser)]
#[command(name = "rte", version, about = "Spiking-network adversarial training engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint plus epoch log
    Train(RunFlags),
    /// Evaluate a checkpoint under an attack suite
    Eval(RunFlags),
    /// Export the cross-timestep transferability matrix
    #[command(name = "transfer-matrix")]
    TransferMatrix(RunFlags),
    /// Export a loss-surface grid around one example
    #[command(name = "loss-surface")]
    LossSurface(RunFlags),
}

/// Flags mirror config keys one-to-one; values given here override the
/// config file.
#[derive(Args, Default)]
struct RunFlags {
    /// Flat key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "batch_size")]
    batch_size: Option<String>,
    #[arg(long = "learning_rate")]
    learning_rate: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long = "random_start")]
    random_start: Option<String>,
    #[arg(long)]
    timesteps: Option<String>,
    #[arg(long)]
    leak: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long = "surrogate_width")]
    surrogate_width: Option<String>,
    #[arg(long = "detach_reset")]
    detach_reset: Option<String>,
    #[arg(long = "readout_bias")]
    readout_bias: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long = "grad_clip")]
    grad_clip: Option<String>,
    #[arg(long = "cosine_decay")]
    cosine_decay: Option<String>,
    #[arg(long = "kl_epsilon")]
    kl_epsilon: Option<String>,
    #[arg(long = "kl_direction")]
    kl_direction: Option<String>,
    #[arg(long = "blobs_n")]
    blobs_n: Option<String>,
    #[arg(long = "blobs_classes")]
    blobs_classes: Option<String>,
    #[arg(long = "blobs_dim")]
    blobs_dim: Option<String>,
    #[arg(long = "blobs_spread")]
    blobs_spread: Option<String>,
    #[arg(long = "train_frac")]
    train_frac: Option<String>,
    #[arg(long = "eval_attacks")]
    eval_attacks: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long = "n_eval")]
    n_eval: Option<String>,
    #[arg(long)]
    extent: Option<String>,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long = "surface_index")]
    surface_index: Option<String>,
}

impl RunFlags {
    fn into_partial(self) -> PartialConfig {
        let mut p = PartialConfig::default();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                p.set(key, v);
            }
        };
        put("method", self.method);
        put("seed", self.seed);
        put("out", self.out);
        put("dataset", self.dataset);
        put("checkpoint", self.checkpoint);
        put("epochs", self.epochs);
        put("batch_size", self.batch_size);
        put("learning_rate", self.learning_rate);
        put("momentum", self.momentum);
        put("gamma", self.gamma);
        put("epsilon", self.epsilon);
        put("alpha", self.alpha);
        put("steps", self.steps);
        put("random_start", self.random_start);
        put("timesteps", self.timesteps);
        put("leak", self.leak);
        put("threshold", self.threshold);
        put("surrogate", self.surrogate);
        put("surrogate_width", self.surrogate_width);
        put("detach_reset", self.detach_reset);
        put("readout_bias", self.readout_bias);
        put("hidden", self.hidden);
        put("grad_clip", self.grad_clip);
        put("cosine_decay", self.cosine_decay);
        put("kl_epsilon", self.kl_epsilon);
        put("kl_direction", self.kl_direction);
        put("blobs_n", self.blobs_n);
        put("blobs_classes", self.blobs_classes);
        put("blobs_dim", self.blobs_dim);
        put("blobs_spread", self.blobs_spread);
        put("train_frac", self.train_frac);
        put("eval_attacks", self.eval_attacks);
        put("metric", self.metric);
        put("n_eval", self.n_eval);
        put("extent", self.extent);
        put("resolution", self.resolution);
        put("surface_index", self.surface_index);
        p
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 1,
        Error::Io(_) | Error::Format(_) | Error::Consistency(_) => 2,
        Error::Contract(_) | Error::Dim { .. } => 3,
    }
}

fn run(command: Command, flags: RunFlags) -> Result<(), Error> {
    let file_cfg = match &flags.config {
        Some(path) => PartialConfig::from_file(path)?,
        None => PartialConfig::default(),
    };
    let cfg = file_cfg.merged_with(flags.into_partial()).resolve()?;
    dispatch(command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, flags) = match cli.command {
        Cmd::Train(f) => (Command::Train, f),
        Cmd::Eval(f) => (Command::Eval, f),
        Cmd::TransferMatrix(f) => (Command::TransferMatrix, f),
        Cmd::LossSurface(f) => (Command::LossSurface, f),
    };
    match run(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
