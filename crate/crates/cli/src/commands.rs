//! Command implementations: train, eval, transfer-matrix, loss-surface.
//!
//! Every command writes the fully resolved config into the output directory
//! first, then its artifacts. All files except `timing.csv` are
//! reproducible bit for bit from the resolved config in single-threaded
//! mode.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rte_core::analysis::{
    loss_surface_grid, robust_accuracy, transferability_matrix, write_matrix_csv, write_meta,
    ArtifactMeta,
};
use rte_core::data::{load_idx, synth_blobs, Dataset};
use rte_core::error::{Error, Result};
use rte_core::rng::{derive_seed, stream};
use rte_core::snn::{load_checkpoint, save_checkpoint, LifConfig, SnnModel};
use rte_core::training::{train, write_epoch_csv, write_timing_csv, TrainConfig};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    TransferMatrix,
    LossSurface,
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out)?;
    fs::write(out.join("resolved.cfg"), cfg.to_flat_text())?;
    match command {
        Command::Train => run_train(cfg, &out),
        Command::Eval => run_eval(cfg, &out),
        Command::TransferMatrix => run_transfer_matrix(cfg, &out),
        Command::LossSurface => run_loss_surface(cfg, &out),
    }
}

/// Train/eval split per the config's dataset spec. Blobs derive from the
/// run seed; `idx:PREFIX` reads `PREFIX-images-idx3-ubyte` and
/// `PREFIX-labels-idx1-ubyte`.
fn load_split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let full = if cfg.dataset == "blobs" {
        synth_blobs(
            cfg.blobs_n,
            cfg.blobs_classes,
            cfg.blobs_dim,
            cfg.blobs_spread,
            derive_seed(cfg.seed, stream::DATA, 0, 0),
        )?
    } else {
        let prefix = cfg.dataset.trim_start_matches("idx:");
        let images = PathBuf::from(format!("{prefix}-images-idx3-ubyte"));
        let labels = PathBuf::from(format!("{prefix}-labels-idx1-ubyte"));
        load_idx(&images, &labels)?
    };
    let n_train = ((full.len() as f64 * cfg.train_frac) as usize).clamp(1, full.len() - 1);
    full.split(n_train)
}

fn require_checkpoint(cfg: &RunConfig) -> Result<SnnModel> {
    if cfg.checkpoint.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no checkpoint given (set --checkpoint or the checkpoint key)",
        )));
    }
    load_checkpoint(Path::new(&cfg.checkpoint))
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        gamma: cfg.gamma,
        attack: cfg.train_attack(),
        seed: cfg.seed,
        method: cfg.method,
        kl_epsilon: cfg.kl_epsilon,
        kl_direction: cfg.kl_direction,
        grad_clip: if cfg.grad_clip > 0.0 {
            Some(cfg.grad_clip)
        } else {
            None
        },
        cosine_decay: cfg.cosine_decay,
    }
}

#[derive(Serialize)]
struct TrainMeta {
    command: &'static str,
    method: &'static str,
    seed: u64,
    n_train: usize,
    n_eval: usize,
    final_clean: f64,
    final_robust: f64,
}

fn run_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train_set, eval_set) = load_split(cfg)?;
    let mut dims = vec![train_set.features()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(train_set.n_classes);
    let mut model = SnnModel::init(
        &dims,
        LifConfig::new(cfg.leak, cfg.threshold, cfg.timesteps)?,
        cfg.surrogate_spec()?,
        cfg.detach_reset,
        cfg.readout_bias,
        cfg.seed,
    )?;
    let report = train(&mut model, &train_set, &eval_set, &train_config(cfg))?;
    save_checkpoint(&model, &out.join("checkpoint.json"))?;
    write_epoch_csv(&report, &out.join("epochs.csv"))?;
    write_timing_csv(&report, &out.join("timing.csv"))?;
    let meta = TrainMeta {
        command: "train",
        method: cfg.method.name(),
        seed: cfg.seed,
        n_train: train_set.len(),
        n_eval: eval_set.len(),
        final_clean: report.final_clean(),
        final_robust: report.final_robust(),
    };
    write_json(&meta, &out.join("train.meta.json"))?;
    println!(
        "train: method={} epochs={} clean={:.2} robust={:.2} -> {}",
        cfg.method.name(),
        cfg.epochs,
        report.final_clean(),
        report.final_robust(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalMeta {
    command: &'static str,
    seed: u64,
    n_eval: usize,
    attacks: Vec<String>,
    clean: f64,
    worst_case: f64,
    tradeoff: f64,
}

fn run_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = require_checkpoint(cfg)?;
    let (_, eval_set) = load_split(cfg)?;
    let attacks: Vec<(String, rte_core::attacks::AttackConfig)> = cfg
        .eval_attacks
        .iter()
        .map(|a| (a.name.clone(), a.to_config(cfg.alpha)))
        .collect();
    let report = robust_accuracy(
        &model,
        &eval_set,
        &attacks,
        derive_seed(cfg.seed, stream::EVAL, 1, 0),
    )?;

    let mut csv = String::from("attack,accuracy\n");
    csv.push_str(&format!("clean,{}\n", report.clean));
    for (name, acc) in &report.per_attack {
        csv.push_str(&format!("{name},{acc}\n"));
    }
    csv.push_str(&format!("worst_case,{}\n", report.worst_case));
    csv.push_str(&format!("tradeoff,{}\n", report.tradeoff));
    fs::write(out.join("eval.csv"), csv)?;

    let meta = EvalMeta {
        command: "eval",
        seed: cfg.seed,
        n_eval: eval_set.len(),
        attacks: attacks.iter().map(|(n, _)| n.clone()).collect(),
        clean: report.clean,
        worst_case: report.worst_case,
        tradeoff: report.tradeoff,
    };
    write_json(&meta, &out.join("eval.meta.json"))?;
    println!(
        "eval: clean={:.2} worst_case={:.2} tradeoff={:.2} -> {}",
        report.clean,
        report.worst_case,
        report.tradeoff,
        out.display()
    );
    Ok(())
}

fn run_transfer_matrix(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = require_checkpoint(cfg)?;
    let (_, eval_set) = load_split(cfg)?;
    let matrix = transferability_matrix(
        &model,
        &eval_set,
        cfg.epsilon,
        cfg.metric,
        cfg.steps,
        cfg.n_eval,
        derive_seed(cfg.seed, stream::MATRIX, 2, 0),
    )?;
    write_matrix_csv(&matrix.values, &out.join("matrix.csv"))?;
    let meta = ArtifactMeta {
        kind: "transfer-matrix".to_string(),
        metric: Some(matrix.metric.name().to_string()),
        epsilon: Some(matrix.epsilon),
        steps: Some(cfg.steps),
        n_samples: Some(matrix.n_samples),
        extent: None,
        resolution: None,
        index: None,
        seed: cfg.seed,
    };
    write_meta(&meta, &out.join("matrix.meta.json"))?;
    println!(
        "transfer-matrix: T={} metric={} n={} -> {}",
        matrix.t_count(),
        matrix.metric.name(),
        matrix.n_samples,
        out.display()
    );
    Ok(())
}

fn run_loss_surface(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = require_checkpoint(cfg)?;
    let (_, eval_set) = load_split(cfg)?;
    if cfg.surface_index >= eval_set.len() {
        return Err(Error::contract(format!(
            "surface_index {} out of range for {} eval examples",
            cfg.surface_index,
            eval_set.len()
        )));
    }
    let x = eval_set.select(&[cfg.surface_index])?.inputs;
    let y = eval_set.labels[cfg.surface_index];
    let grid = loss_surface_grid(
        &model,
        &x,
        y,
        cfg.extent,
        cfg.resolution,
        derive_seed(cfg.seed, stream::SURFACE, 3, 0),
    )?;
    write_matrix_csv(&grid, &out.join("surface.csv"))?;
    let meta = ArtifactMeta {
        kind: "loss-surface".to_string(),
        metric: None,
        epsilon: None,
        steps: None,
        n_samples: None,
        extent: Some(cfg.extent),
        resolution: Some(cfg.resolution),
        index: Some(cfg.surface_index),
        seed: cfg.seed,
    };
    write_meta(&meta, &out.join("surface.meta.json"))?;
    println!(
        "loss-surface: {}x{} extent={} -> {}",
        cfg.resolution,
        cfg.resolution,
        cfg.extent,
        out.display()
    );
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("meta encode: {e}")))?;
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}
