//! CP phase features, the pooled-correlation CFO estimator, the CRLB and
//! error statistics.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::signal::{wrap_phase, OfdmConfig};

/// Per-position phase of `r_tail ⊙ conj(r_cp)`, symbols concatenated in time
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFeature {
    phi: Vec<f64>,
}

impl PhaseFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.phi
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfoEstimate {
    pub theta: f64,
    pub hz: f64,
}

impl CfoEstimate {
    /// Wraps `theta` into `(-0.5, 0.5]` and attaches the Hz value.
    pub fn from_theta(theta: f64, cfg: &OfdmConfig) -> Self {
        let theta = wrap_phase(2.0 * PI * theta) / (2.0 * PI);
        Self {
            theta,
            hz: theta_to_hz(theta, cfg),
        }
    }
}

fn check_frame(r: &[Complex64], cfg: &OfdmConfig) -> Result<()> {
    if r.len() != cfg.frame_len() {
        return Err(CoreError::LengthMismatch {
            expected: cfg.frame_len(),
            actual: r.len(),
        });
    }
    Ok(())
}

/// `m = r_tail ⊙ conj(r_cp)` for every prefix position of every symbol.
pub fn cp_products(r: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    check_frame(r, cfg)?;
    let (k, g) = (cfg.symbol_len, cfg.cp_len);
    Ok(r.chunks(cfg.symbol_stride())
        .flat_map(|sym| (0..g).map(move |i| sym[i + k] * sym[i].conj()))
        .collect())
}

pub fn cp_phase_features(r: &[Complex64], cfg: &OfdmConfig) -> Result<PhaseFeature> {
    let phi = cp_products(r, cfg)?
        .into_iter()
        .map(|m| wrap_phase(m.arg()))
        .collect();
    Ok(PhaseFeature { phi })
}

/// `θ̂ = arg(Σ m) / 2π`, pooled over every prefix position in the frame.
pub fn cp_ml_estimate(r: &[Complex64], cfg: &OfdmConfig) -> Result<CfoEstimate> {
    let sum: Complex64 = cp_products(r, cfg)?.into_iter().sum();
    if sum.norm() == 0.0 || !sum.norm().is_finite() {
        return Err(CoreError::EstimateUndefined);
    }
    Ok(CfoEstimate::from_theta(sum.arg() / (2.0 * PI), cfg))
}

pub fn theta_to_hz(theta: f64, cfg: &OfdmConfig) -> f64 {
    theta * cfg.sample_rate_hz / cfg.symbol_len as f64
}

pub fn hz_to_theta(hz: f64, cfg: &OfdmConfig) -> f64 {
    hz * cfg.symbol_len as f64 / cfg.sample_rate_hz
}

/// CRLB for CFO in Hz²: `fs² / ((2π)² SNR Σ n² |x[n]|²)`.
pub fn crlb_hz2(snr_linear: f64, x: &[Complex64], fs: f64) -> Result<f64> {
    if !(snr_linear > 0.0) || !snr_linear.is_finite() {
        return Err(CoreError::InvalidParameter(format!("snr_linear must be positive, got {snr_linear}")));
    }
    if x.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(n, v)| (n as f64).powi(2) * v.norm_sqr())
        .sum();
    if weighted <= 0.0 {
        return Err(CoreError::ZeroPower);
    }
    Ok(fs * fs / ((2.0 * PI).powi(2) * snr_linear * weighted))
}

/// Population statistics of estimation errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data with linear interpolation between closest ranks
/// (position `p (n-1)`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn error_stats(estimates_hz: &[f64], truths_hz: &[f64]) -> Result<ErrorStats> {
    if estimates_hz.len() != truths_hz.len() {
        return Err(CoreError::LengthMismatch {
            expected: truths_hz.len(),
            actual: estimates_hz.len(),
        });
    }
    if estimates_hz.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let mut errors: Vec<f64> = estimates_hz.iter().zip(truths_hz).map(|(e, t)| e - t).collect();
    if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
        return Err(CoreError::NonFinite(i));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let variance = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    errors.sort_by(f64::total_cmp);
    Ok(ErrorStats {
        count: errors.len(),
        mean,
        variance,
        q1: quantile_sorted(&errors, 0.25),
        median: quantile_sorted(&errors, 0.5),
        q3: quantile_sorted(&errors, 0.75),
        min: errors[0],
        max: errors[errors.len() - 1],
    })
}
