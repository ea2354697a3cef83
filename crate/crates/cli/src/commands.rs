//! The subcommands. Each returns the files it wrote; [`run`] adds the
//! manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cfo_nn::{load_checkpoint, save_checkpoint, Checkpoint};
use cfo_sim2real::{
    emulate_device, emulate_device_captures, finetune, ingest_capture, pretrain, Capture, DnnEstimator,
};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_SWEEP_SNR_DB, TRIALS_CP_ONLY, TRIALS_WITH_DNN};
use crate::ensure_frame_config;
use crate::eval::{self, BerRow, CfoSource};
use crate::manifest::{write_manifest, RunRecord};

/// Emulation session used for fine-tuning data.
pub const SESSION_ADAPT: u64 = 0;
/// Emulation session used for evaluation, disjoint from [`SESSION_ADAPT`].
pub const SESSION_EVAL: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Crlb,
    Simulate,
    Pretrain,
    Finetune,
    EvalVariance,
    EvalErrdist,
    EvalBer,
    Constellation,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Crlb,
        Command::Simulate,
        Command::Pretrain,
        Command::Finetune,
        Command::EvalVariance,
        Command::EvalErrdist,
        Command::EvalBer,
        Command::Constellation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Crlb => "crlb",
            Command::Simulate => "simulate",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::EvalVariance => "eval-variance",
            Command::EvalErrdist => "eval-errdist",
            Command::EvalBer => "eval-ber",
            Command::Constellation => "constellation",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).with_context(|| format!("unknown command `{s}`"))
    }
}

/// Runs `command` with `cfg` (already resolved), writing outputs and the
/// manifest into `out_dir`. Returns the manifest path.
pub fn run(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let outputs = match command {
        Command::Crlb => cmd_crlb(cfg, out_dir)?,
        Command::Simulate => cmd_simulate(cfg, out_dir)?,
        Command::Pretrain => cmd_pretrain(cfg, out_dir)?,
        Command::Finetune => cmd_finetune(cfg, out_dir)?,
        Command::EvalVariance => cmd_eval_variance(cfg, out_dir)?,
        Command::EvalErrdist => cmd_eval_errdist(cfg, out_dir)?,
        Command::EvalBer => cmd_eval_ber(cfg, out_dir)?,
        Command::Constellation => cmd_constellation(cfg, out_dir)?,
    };
    let record = RunRecord::new(command.name(), cfg, out_dir, &outputs)?;
    write_manifest(out_dir, cfg, &record)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn load_required_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.checkpoint.as_ref().context("this command needs --checkpoint")?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn estimator(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<DnnEstimator> {
    let est = DnnEstimator::from_checkpoint(ckpt)?;
    ensure_frame_config(&est.cfg, &cfg.ofdm)?;
    Ok(est)
}

/// Captures named in the config, or else one emulated capture per profile
/// in `session`, each with its device id.
fn collect_captures(cfg: &RunConfig, session: u64) -> Result<Vec<Capture>> {
    if !cfg.captures.is_empty() {
        return cfg.captures.iter().map(|p| ingest_capture(p).with_context(|| format!("ingesting {}", p.display()))).collect();
    }
    if cfg.profiles.is_empty() {
        bail!("give --captures or at least one --profile");
    }
    let snr = cfg.link_snr()?;
    cfg.profiles
        .iter()
        .map(|name| Ok(emulate_device(&cfg.profile(name)?, cfg.n_frames, snr, &cfg.ofdm, cfg.seed, session)?))
        .collect()
}

/// Groups captures by device id, keeping first-seen order.
fn by_device(captures: Vec<Capture>) -> Vec<(String, Vec<Capture>)> {
    let mut groups: Vec<(String, Vec<Capture>)> = Vec::new();
    for cap in captures {
        match groups.iter_mut().find(|(d, _)| *d == cap.meta.device_id) {
            Some((_, list)) => list.push(cap),
            None => groups.push((cap.meta.device_id.clone(), vec![cap])),
        }
    }
    groups
}

pub fn cmd_crlb(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = eval::crlb_table(&cfg.snr_list(&DEFAULT_SWEEP_SNR_DB)?, &cfg.ofdm)?;
    let path = out.join("crlb.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.profiles.is_empty() {
        bail!("simulate needs at least one --profile");
    }
    let snr = cfg.link_snr()?;
    let mut outputs = Vec::new();
    for name in &cfg.profiles {
        let profile = cfg.profile(name)?;
        let meta = emulate_device_captures(&profile, cfg.n_frames, snr, &cfg.ofdm, cfg.seed, SESSION_ADAPT, out, name)?;
        outputs.push(cfo_sim2real::capture::data_path(&meta));
        outputs.push(out.join(format!("{name}.bits")));
        outputs.push(meta);
    }
    Ok(outputs)
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = pretrain(&cfg.dataset, &cfg.ofdm, &cfg.train, |e| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}  lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    })?;
    if !outcome.degenerate_positions.is_empty() {
        eprintln!("warning: {} feature positions have near-zero spread", outcome.degenerate_positions.len());
    }
    let ckpt = out.join("pretrained.ckpt");
    save_checkpoint(&outcome.checkpoint, &ckpt)?;
    let history = out.join("pretrain_history.csv");
    write_csv(&history, &outcome.history)?;
    Ok(vec![ckpt, history])
}

#[derive(Serialize)]
struct FineTuneHistoryRow<'a> {
    device: &'a str,
    epoch: usize,
    train_loss: f64,
}

#[derive(Serialize)]
struct FineTuneSummaryRow<'a> {
    device: &'a str,
    frames: usize,
    loss_before: f64,
    loss_after: f64,
}

pub fn cmd_finetune(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let base = load_required_checkpoint(cfg)?;
    let groups = by_device(collect_captures(cfg, SESSION_ADAPT)?);
    let mut outputs = Vec::new();
    let mut history = Vec::new();
    let mut summary = Vec::new();
    for (device, captures) in &groups {
        let outcome = finetune(&base, captures, &cfg.finetune, |e| {
            eprintln!("{device}: epoch {:>3}  loss {:.6}", e.epoch, e.train_loss);
        })
        .with_context(|| format!("fine-tuning for {device}"))?;
        let path = out.join(format!("finetuned-{device}.ckpt"));
        save_checkpoint(&outcome.checkpoint, &path)?;
        outputs.push(path);
        history.extend(outcome.history.iter().map(|e| FineTuneHistoryRow { device, epoch: e.epoch, train_loss: e.train_loss }));
        summary.push(FineTuneSummaryRow {
            device,
            frames: captures.iter().map(|c| c.meta.n_frames).sum(),
            loss_before: outcome.loss_before,
            loss_after: outcome.loss_after,
        });
    }
    let hist_path = out.join("finetune_history.csv");
    write_csv(&hist_path, &history)?;
    let sum_path = out.join("finetune_summary.csv");
    write_csv(&sum_path, &summary)?;
    outputs.push(hist_path);
    outputs.push(sum_path);
    Ok(outputs)
}

pub fn cmd_eval_variance(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut est = estimator(&load_required_checkpoint(cfg)?, cfg)?;
    let snrs = cfg.snr_list(&DEFAULT_SWEEP_SNR_DB)?;
    let points = eval::sweep(&cfg.dataset, &cfg.ofdm, &snrs, cfg.trials.unwrap_or(TRIALS_WITH_DNN), Some(&mut est))?;
    let path = out.join("variance.csv");
    write_csv(&path, &eval::variance_table(&points, &cfg.ofdm)?)?;
    Ok(vec![path])
}

pub fn cmd_eval_errdist(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let snrs = cfg.snr_list(&DEFAULT_SWEEP_SNR_DB)?;
    let points = match &cfg.checkpoint {
        Some(_) => {
            let mut est = estimator(&load_required_checkpoint(cfg)?, cfg)?;
            eval::sweep(&cfg.dataset, &cfg.ofdm, &snrs, cfg.trials.unwrap_or(TRIALS_WITH_DNN), Some(&mut est))?
        }
        None => eval::sweep(&cfg.dataset, &cfg.ofdm, &snrs, cfg.trials.unwrap_or(TRIALS_CP_ONLY), None)?,
    };
    let path = out.join("errdist.csv");
    write_csv(&path, &eval::error_rows(&points))?;
    Ok(vec![path])
}

pub fn cmd_eval_ber(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut pretrained = match &cfg.checkpoint {
        Some(_) => Some(estimator(&load_required_checkpoint(cfg)?, cfg)?),
        None => None,
    };
    let mut finetuned: BTreeMap<&str, DnnEstimator> = BTreeMap::new();
    for (device, path) in &cfg.finetuned {
        let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        finetuned.insert(device, estimator(&ckpt, cfg)?);
    }
    let mut rows = Vec::new();
    for (device, captures) in by_device(collect_captures(cfg, SESSION_EVAL)?) {
        let mut methods: Vec<(&'static str, CfoSource<'_>)> = vec![("none", CfoSource::None), ("cp", CfoSource::Cp)];
        if let Some(est) = pretrained.as_mut() {
            methods.push(("pretrained", CfoSource::Dnn(est)));
        }
        if let Some(est) = finetuned.get_mut(device.as_str()) {
            methods.push(("finetuned", CfoSource::Dnn(est)));
        }
        for (method, mut source) in methods {
            let (mut errors, mut bits) = (0, 0);
            for cap in &captures {
                let (e, n) = eval::capture_ber(cap, &mut source)?;
                errors += e;
                bits += n;
            }
            rows.push(BerRow { device: device.clone(), method, ber: errors as f64 / bits as f64 });
        }
    }
    let path = out.join("ber.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

pub fn cmd_constellation(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let captures = collect_captures(cfg, SESSION_EVAL)?;
    let [capture] = &captures[..] else {
        bail!("constellation takes exactly one capture or profile, got {}", captures.len());
    };
    let method = cfg.method.as_deref().unwrap_or(if cfg.checkpoint.is_some() { "dnn" } else { "cp" });
    let mut est;
    let mut source = match method {
        "none" => CfoSource::None,
        "cp" => CfoSource::Cp,
        "true" => CfoSource::True(capture.meta.true_theta.context("method `true` needs a capture with a recorded true_theta")?),
        "dnn" => {
            est = estimator(&load_required_checkpoint(cfg)?, cfg)?;
            CfoSource::Dnn(&mut est)
        }
        other => bail!("unknown method `{other}` (expected dnn, cp, true or none)"),
    };
    let path = out.join("constellation.csv");
    write_csv(&path, &eval::constellation(capture, &mut source)?)?;
    Ok(vec![path])
}
