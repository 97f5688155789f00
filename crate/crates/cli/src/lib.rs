//! Command-line harness: synthetic data, training, evaluation, gradient
//! checks, benchmarking and normalization statistics.
//!
//! Exit codes are 0 on success, 1 when a check fails, and 2 on I/O or
//! configuration errors.

pub mod bench;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod train;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bcdnet_core::data::{build_manifest, channel_stats, synth::write_synth_corpus, Split};
use bcdnet_core::{set_exec_mode, ExecMode};
use clap::{ArgAction, Parser, Subcommand};
use serde_json::json;

use crate::config::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bcdnet", version, about = "Train and evaluate the BCDNet patch classifier")]
pub struct Cli {
    /// Ordered reductions and single-threaded data loading. Pass `false` to
    /// use all cores.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a two-class synthetic texture corpus.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes metrics.csv, best.ckpt, last.ckpt and DONE.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_root: PathBuf,
        /// Defaults to `out_dir` from the config, then `./runs/latest`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split; prints JSON and writes it to a file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to `eval_<split>.json` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Finite-difference check of every layer's backward pass.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::GRADCHECK_SEEDS)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Throughput and memory of forward passes and train steps.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Per-channel mean and std of the train split.
    Stats {
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Store the statistics in the config file's `augment` section.
        #[arg(long, requires = "config")]
        write: bool,
    },
}

/// Execute a parsed command line, returning the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    set_exec_mode(if cli.deterministic {
        ExecMode::Deterministic
    } else {
        ExecMode::Fast
    });
    match cli.command {
        Command::Synth {
            out_dir,
            n_per_class,
            seed,
        } => {
            let files = write_synth_corpus(&out_dir, n_per_class, seed)?;
            writeln!(out, "wrote {} images to {}", files.len(), out_dir.display())?;
        }
        Command::Train {
            config,
            data_root,
            out_dir,
        } => {
            let cfg = TrainConfig::load(config.as_deref())?;
            let out_dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs/latest"));
            train::train(&cfg, &data_root, &out_dir, out)?;
        }
        Command::Eval {
            checkpoint,
            data_root,
            split,
            out: out_file,
            batch_size,
        } => {
            let split: Split = split.parse()?;
            let report = eval::eval(&checkpoint, &data_root, split, batch_size)?;
            let text = serde_json::to_string_pretty(&report)?;
            let path = out_file.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(format!("eval_{split}.json"))
            });
            std::fs::write(&path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
            writeln!(out, "{text}")?;
        }
        Command::Gradcheck { seeds, inject_fault } => {
            if seeds == 0 {
                bail!("--seeds must be ≥ 1");
            }
            let report = gradcheck::run_suite(seeds, inject_fault.as_deref())?;
            write!(out, "{}", report.table())?;
            writeln!(
                out,
                "{} layers, {seeds} seeds, {:.2}s",
                report.entries.len(),
                report.seconds
            )?;
            if !report.pass() {
                writeln!(out, "failing: {}", report.failing().join(", "))?;
                return Ok(EXIT_FAILED);
            }
        }
        Command::Bench {
            config,
            data_root,
            batch_size,
        } => {
            let mut cfg = TrainConfig::load(config.as_deref())?;
            if let Some(bs) = batch_size {
                cfg.batch_size = bs;
            }
            let report = bench::bench(&cfg, data_root.as_deref())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Stats {
            data_root,
            config,
            write,
        } => {
            let mut cfg = TrainConfig::load(config.as_deref())?;
            let manifest = build_manifest(&data_root, cfg.seed)?;
            let (mean, std) = channel_stats(&manifest, Split::Train, cfg.model.input_hw)?;
            writeln!(out, "{}", json!({ "mean": mean, "std": std }))?;
            if write {
                let path = config.expect("clap enforces --config");
                cfg.augment.mean = mean;
                cfg.augment.std = std;
                std::fs::write(&path, cfg.to_json() + "\n")?;
            }
        }
    }
    Ok(EXIT_OK)
}
