//! Synthetic pre-training data: random bits through random impairments,
//! reduced to CP phase features labelled with the true CFO.

use cfo_core::impairments::{MultipathSpec, DEFAULT_CARRIER_HZ};
use cfo_core::rng::item_rng;
use cfo_core::{
    build_frame, cp_phase_features, render_capture, BitStream, ChannelTaps, ComplexBuffer, DeviceProfile, NoiseSpec,
    OfdmConfig, Theta,
};
use cfo_nn::Dataset;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, Sim2RealError};

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Sim2RealError::Config(format!("{name} range [{}, {}] is not ordered", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Distribution of synthetic training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub snr_db: Span,
    /// CFO in subcarrier spacings.
    pub theta: Span,
    pub multipath: MultipathSpec,
    pub linewidth_hz: Span,
    pub iq_gain: Span,
    pub iq_phase_deg: Span,
    pub sfo_ppm: Span,
    pub seed: u64,
}

impl Default for SimDatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 50_000,
            n_val: 5_000,
            snr_db: Span::new(0.0, 30.0),
            theta: Span::new(-0.45, 0.45),
            multipath: MultipathSpec::default(),
            linewidth_hz: Span::new(0.0, 500.0),
            iq_gain: Span::new(1.0, 1.1),
            iq_phase_deg: Span::new(0.0, 5.0),
            sfo_ppm: Span::new(-20.0, 20.0),
            seed: 0,
        }
    }
}

impl SimDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Sim2RealError::Config("n_train and n_val must be positive".into()));
        }
        for (name, span) in [
            ("snr_db", self.snr_db),
            ("theta", self.theta),
            ("linewidth_hz", self.linewidth_hz),
            ("iq_gain", self.iq_gain),
            ("iq_phase_deg", self.iq_phase_deg),
            ("sfo_ppm", self.sfo_ppm),
        ] {
            span.validate(name)?;
        }
        if self.theta.lo <= -0.5 || self.theta.hi >= 0.5 {
            return Err(Sim2RealError::Config("theta must stay inside (-0.5, 0.5)".into()));
        }
        if self.linewidth_hz.lo < 0.0 || self.iq_gain.lo <= 0.0 {
            return Err(Sim2RealError::Config("linewidth must be >= 0 and iq_gain > 0".into()));
        }
        self.multipath.validate()?;
        Ok(())
    }
}

/// Which independent family of frames to draw. Each maps to its own seed
/// domain, so splits never share a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    /// Held-out evaluation set; the index separates test sets drawn under
    /// one master seed (for instance one per SNR point).
    Test(u16),
}

impl Split {
    fn domain(self) -> u16 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test(i) => 0x100 | (i & 0xff),
        }
    }
}

/// One rendered synthetic frame.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub samples: ComplexBuffer,
    pub bits: BitStream,
    pub theta: f64,
    pub snr_db: f64,
}

/// Draws impairments, bits and channel for one frame and renders it.
/// `snr_db` overrides the SNR range when given.
pub fn draw_frame<R: Rng + ?Sized>(spec: &SimDatasetSpec, cfg: &OfdmConfig, snr_db: Option<f64>, rng: &mut R) -> Result<SimFrame> {
    let snr_db = snr_db.unwrap_or_else(|| spec.snr_db.sample(rng));
    let theta = spec.theta.sample(rng);
    let profile = DeviceProfile {
        name: String::new(),
        sfo_ppm: spec.sfo_ppm.sample(rng),
        carrier_hz: DEFAULT_CARRIER_HZ,
        lo_ppm: Theta(theta).to_hz(cfg) / (DEFAULT_CARRIER_HZ * 1e-6),
        phase_noise_linewidth_hz: spec.linewidth_hz.sample(rng),
        iq_gain: spec.iq_gain.sample(rng),
        iq_phase_rad: spec.iq_phase_deg.sample(rng).to_radians(),
    };
    let h = ChannelTaps::random(&spec.multipath, rng);
    let bits = BitStream::random(cfg.bits_per_frame(), rng);
    let frame = build_frame(&bits, cfg)?;
    let (samples, theta) = render_capture(&[frame], &profile, &h, &NoiseSpec::new(snr_db)?, cfg, rng)?;
    Ok(SimFrame { samples, bits, theta: theta.value(), snr_db })
}

/// Items `range` of `split`, item `i` drawn from its own generator, so a
/// large set can be produced in pieces.
pub fn generate_frames(
    spec: &SimDatasetSpec,
    cfg: &OfdmConfig,
    split: Split,
    range: std::ops::Range<usize>,
    snr_db: Option<f64>,
) -> Result<Vec<SimFrame>> {
    spec.validate()?;
    cfg.validate()?;
    range
        .into_par_iter()
        .map(|i| draw_frame(spec, cfg, snr_db, &mut item_rng(spec.seed, split.domain(), i as u64)))
        .collect()
}

/// CP phase features of `n` frames of `split`, labelled with their CFO.
pub fn generate_features(spec: &SimDatasetSpec, cfg: &OfdmConfig, split: Split, n: usize) -> Result<Dataset> {
    spec.validate()?;
    cfg.validate()?;
    let rows: Vec<(Vec<f32>, f32)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let frame = draw_frame(spec, cfg, None, &mut item_rng(spec.seed, split.domain(), i as u64))?;
            Ok((feature_row(&frame.samples, cfg)?, frame.theta as f32))
        })
        .collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(n * cfg.feature_len());
    let mut labels = Vec::with_capacity(n);
    for (row, label) in rows {
        features.extend(row);
        labels.push(label);
    }
    Ok(Dataset::new(cfg.feature_len(), features, labels)?)
}

/// The network input for one boundary-aligned frame, before standardization.
pub fn feature_row(frame: &[cfo_core::Complex64], cfg: &OfdmConfig) -> Result<Vec<f32>> {
    Ok(cp_phase_features(frame, cfg)?.as_slice().iter().map(|&v| v as f32).collect())
}

#[derive(Debug, Clone)]
pub struct PretrainData {
    pub train: Dataset,
    pub val: Dataset,
}

/// Training and validation splits of `spec`.
pub fn generate_pretrain_dataset(spec: &SimDatasetSpec, cfg: &OfdmConfig) -> Result<PretrainData> {
    Ok(PretrainData {
        train: generate_features(spec, cfg, Split::Train, spec.n_train)?,
        val: generate_features(spec, cfg, Split::Val, spec.n_val)?,
    })
}

/// SHA-256 over the feature width, features and labels (little-endian).
pub fn dataset_digest(data: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((data.dim as u64).to_le_bytes());
    data.features.iter().for_each(|v| h.update(v.to_le_bytes()));
    data.labels.iter().for_each(|v| h.update(v.to_le_bytes()));
    h.finalize().into()
}
