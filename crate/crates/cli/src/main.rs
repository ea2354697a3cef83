use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfo_cli::{run, Command, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Per-device CFO calibration experiments.
#[derive(Parser)]
#[command(name = "cfocal", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Bound on CFO variance per SNR.
    Crlb,
    /// Emulate captures for each --profile.
    Simulate,
    /// Train the network on synthetic frames.
    Pretrain,
    /// Adapt the head of --checkpoint to each device's captures.
    Finetune,
    /// Error variance of both estimators against the bound.
    EvalVariance,
    /// Raw per-trial errors in long format.
    EvalErrdist,
    /// BER after compensation by each available method.
    EvalBer,
    /// Compensated differential symbols of one capture.
    Constellation,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Crlb => Command::Crlb,
            Sub::Simulate => Command::Simulate,
            Sub::Pretrain => Command::Pretrain,
            Sub::Finetune => Command::Finetune,
            Sub::EvalVariance => Command::EvalVariance,
            Sub::EvalErrdist => Command::EvalErrdist,
            Sub::EvalBer => Command::EvalBer,
            Sub::Constellation => Command::Constellation,
        }
    }
}

#[derive(Args)]
struct Flags {
    /// TOML config or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated SNR values in dB.
    #[arg(long, global = true)]
    snr: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Device profile name; repeatable.
    #[arg(long, global = true)]
    profile: Vec<String>,
    /// Capture sidecar path; repeatable.
    #[arg(long, global = true)]
    captures: Vec<PathBuf>,
    /// Fine-tuned checkpoint as DEVICE=PATH; repeatable.
    #[arg(long, global = true, value_parser = parse_finetuned)]
    finetuned: Vec<(String, PathBuf)>,
    /// Frames per emulated capture.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// CFO source for `constellation`: dnn, cp, true or none.
    #[arg(long, global = true)]
    method: Option<String>,
}

fn parse_finetuned(s: &str) -> Result<(String, PathBuf), String> {
    let (device, path) = s.split_once('=').ok_or("expected DEVICE=PATH")?;
    Ok((device.to_string(), PathBuf::from(path)))
}

fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad SNR value `{t}`")))
        .collect()
}

fn build_config(command: Command, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let (cfg, recorded) = RunConfig::load(path)?;
            if let Some(recorded) = recorded {
                if recorded != command.name() {
                    bail!("{} was written by `{recorded}`, not `{command}`", path.display());
                }
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = &flags.snr {
        cfg.snr_db = Some(parse_snr_list(snr)?);
    }
    if let Some(t) = flags.trials {
        cfg.trials = Some(t);
    }
    if let Some(c) = &flags.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if !flags.profile.is_empty() {
        cfg.profiles = flags.profile.clone();
    }
    if !flags.captures.is_empty() {
        cfg.captures = flags.captures.clone();
    }
    cfg.finetuned.extend(flags.finetuned.iter().cloned());
    if let Some(n) = flags.frames {
        cfg.n_frames = n;
    }
    if let Some(m) = &flags.method {
        cfg.method = Some(m.clone());
    }
    Ok(cfg.resolved())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let result = build_config(command, &cli.flags).and_then(|cfg| run(command, &cfg, &cli.flags.out));
    match result {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
