//! Estimator sweeps, BER and constellation dumps behind the commands.

use anyhow::{bail, Context, Result};
use cfo_core::estimators::ErrorStats;
use cfo_core::signal::{bit_errors, dqpsk_demodulate, frame_to_freq};
use cfo_core::{cp_ml_estimate, crlb_hz2, error_stats, power_normalize, theta_to_hz, Complex64, OfdmConfig};
use cfo_sim2real::{compensate, generate_frames, Capture, DnnEstimator, SimDatasetSpec, Split};
use rayon::prelude::*;
use serde::Serialize;

/// Frames rendered per piece of a sweep, bounding memory.
const SWEEP_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrlbRow {
    pub snr_db: f64,
    pub crlb_hz2: f64,
}

/// Bound for a unit-modulus sequence of one frame's length at each SNR.
pub fn crlb_table(snrs: &[f64], cfg: &OfdmConfig) -> Result<Vec<CrlbRow>> {
    if snrs.is_empty() {
        bail!("the SNR list is empty");
    }
    let x = vec![Complex64::new(1.0, 0.0); cfg.frame_len()];
    snrs.iter()
        .map(|&snr_db| {
            let crlb = crlb_hz2(10f64.powf(snr_db / 10.0), &x, cfg.sample_rate_hz)?;
            Ok(CrlbRow { snr_db, crlb_hz2: crlb })
        })
        .collect()
}

/// Per-trial errors in Hz at one SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub cp: Vec<f64>,
    pub dnn: Option<Vec<f64>>,
}

impl SweepPoint {
    pub fn cp_stats(&self) -> Result<ErrorStats> {
        Ok(error_stats(&self.cp, &vec![0.0; self.cp.len()])?)
    }

    pub fn dnn_stats(&self) -> Result<Option<ErrorStats>> {
        self.dnn.as_ref().map(|d| Ok(error_stats(d, &vec![0.0; d.len()])?)).transpose()
    }
}

/// Runs the CP estimator, and the network when given, on `trials` fresh
/// frames per SNR. Point `i` uses held-out test split `i` of `spec`.
pub fn sweep(
    spec: &SimDatasetSpec,
    cfg: &OfdmConfig,
    snrs: &[f64],
    trials: usize,
    mut dnn: Option<&mut DnnEstimator>,
) -> Result<Vec<SweepPoint>> {
    if snrs.is_empty() {
        bail!("the SNR list is empty");
    }
    if trials == 0 {
        bail!("trials must be positive");
    }
    let mut points = Vec::with_capacity(snrs.len());
    for (i, &snr_db) in snrs.iter().enumerate() {
        let split = Split::Test(u16::try_from(i).context("too many SNR points")?);
        let mut cp = Vec::with_capacity(trials);
        let mut nn = dnn.as_ref().map(|_| Vec::with_capacity(trials));
        for start in (0..trials).step_by(SWEEP_CHUNK) {
            let frames = generate_frames(spec, cfg, split, start..(start + SWEEP_CHUNK).min(trials), Some(snr_db))?;
            let cp_part: Vec<f64> = frames
                .par_iter()
                .map(|f| Ok(theta_to_hz(cp_ml_estimate(&f.samples, cfg)?.theta - f.theta, cfg)))
                .collect::<Result<_>>()?;
            cp.extend(cp_part);
            if let (Some(est), Some(nn)) = (dnn.as_deref_mut(), nn.as_mut()) {
                let samples: Vec<&[Complex64]> = frames.iter().map(|f| &f.samples[..]).collect();
                let theta = est.estimate(&samples)?;
                nn.extend(theta.iter().zip(&frames).map(|(t, f)| theta_to_hz(t - f.theta, cfg)));
            }
        }
        points.push(SweepPoint { snr_db, cp, dnn: nn });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRow {
    pub snr_db: f64,
    pub dnn_var_hz2: f64,
    pub cp_var_hz2: f64,
    pub crlb_hz2: f64,
}

pub fn variance_table(points: &[SweepPoint], cfg: &OfdmConfig) -> Result<Vec<VarianceRow>> {
    let snrs: Vec<f64> = points.iter().map(|p| p.snr_db).collect();
    let crlb = crlb_table(&snrs, cfg)?;
    points
        .iter()
        .zip(crlb)
        .map(|(p, c)| {
            let dnn = p.dnn_stats()?.context("variance table needs network errors")?;
            Ok(VarianceRow { snr_db: p.snr_db, dnn_var_hz2: dnn.variance, cp_var_hz2: p.cp_stats()?.variance, crlb_hz2: c.crlb_hz2 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub snr_db: f64,
    pub method: &'static str,
    pub error_hz: f64,
}

/// Long-format errors, sorted within each `(snr, method)` group.
pub fn error_rows(points: &[SweepPoint]) -> Vec<ErrorRow> {
    let mut rows = Vec::new();
    for p in points {
        let mut groups = vec![("cp", p.cp.clone())];
        if let Some(d) = &p.dnn {
            groups.push(("dnn", d.clone()));
        }
        for (method, mut errs) in groups {
            errs.sort_by(f64::total_cmp);
            rows.extend(errs.into_iter().map(|error_hz| ErrorRow { snr_db: p.snr_db, method, error_hz }));
        }
    }
    rows
}

/// Where a compensation CFO comes from.
pub enum CfoSource<'a> {
    None,
    Cp,
    True(f64),
    Dnn(&'a mut DnnEstimator),
}

impl CfoSource<'_> {
    /// One estimate per frame, in subcarrier spacings.
    pub fn estimate(&mut self, frames: &[&[Complex64]], cfg: &OfdmConfig) -> Result<Vec<f64>> {
        Ok(match self {
            CfoSource::None => vec![0.0; frames.len()],
            CfoSource::True(t) => vec![*t; frames.len()],
            CfoSource::Cp => frames.par_iter().map(|f| Ok(cp_ml_estimate(f, cfg)?.theta)).collect::<Result<_>>()?,
            CfoSource::Dnn(est) => {
                super::ensure_frame_config(&est.cfg, cfg)?;
                est.estimate(frames)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRow {
    pub device: String,
    pub method: &'static str,
    pub ber: f64,
}

/// Pooled BER over every frame of `capture` after compensating with
/// `source`'s estimates.
pub fn capture_ber(capture: &Capture, source: &mut CfoSource<'_>) -> Result<(usize, usize)> {
    let cfg = capture.meta.frame_config()?;
    let frames = capture.frames()?;
    let samples: Vec<&[Complex64]> = frames.iter().map(|f| f.0).collect();
    let theta = source.estimate(&samples, &cfg)?;
    let errors: usize = frames
        .par_iter()
        .zip(&theta)
        .map(|((r, bits), &t)| {
            let (rx, _) = dqpsk_demodulate(&frame_to_freq(&compensate(r, t, &cfg), &cfg)?);
            Ok(bit_errors(bits, &rx))
        })
        .sum::<Result<usize>>()?;
    Ok((errors, capture.bits.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstellationRow {
    pub frame: usize,
    pub symbol: usize,
    pub subcarrier: usize,
    pub re: f64,
    pub im: f64,
}

/// Differential products `Y_k conj(Y_{k-1})` of every frame after
/// compensation and power normalization, each symbol's products scaled to
/// unit mean power. `subcarrier` indexes the later subcarrier of each pair
/// (1..K).
pub fn constellation(capture: &Capture, source: &mut CfoSource<'_>) -> Result<Vec<ConstellationRow>> {
    let cfg = capture.meta.frame_config()?;
    let frames = capture.frames()?;
    let samples: Vec<&[Complex64]> = frames.iter().map(|f| f.0).collect();
    let theta = source.estimate(&samples, &cfg)?;
    let per_frame: Vec<Vec<ConstellationRow>> = samples
        .par_iter()
        .zip(&theta)
        .enumerate()
        .map(|(frame, (r, &t))| {
            let y = power_normalize(&frame_to_freq(&compensate(r, t, &cfg), &cfg)?)?;
            let mut rows = Vec::with_capacity(cfg.num_symbols * (cfg.symbol_len - 1));
            for (symbol, sym) in y.iter().enumerate() {
                let d: Vec<Complex64> = sym.windows(2).map(|w| w[1] * w[0].conj()).collect();
                let power = d.iter().map(|v| v.norm_sqr()).sum::<f64>() / d.len() as f64;
                let scale = if power > 0.0 { power.sqrt().recip() } else { 0.0 };
                rows.extend(d.iter().enumerate().map(|(i, v)| ConstellationRow {
                    frame,
                    symbol,
                    subcarrier: i + 1,
                    re: v.re * scale,
                    im: v.im * scale,
                }));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.concat())
}
