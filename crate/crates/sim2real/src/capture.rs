//! Capture files: `<stem>.cf32` holds interleaved little-endian `f32` I/Q,
//! `<stem>.meta` is a TOML sidecar, and the transmitted bits live in a packed
//! MSB-first file named by the sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use cfo_core::{BitStream, Complex64, ComplexBuffer, OfdmConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, Sim2RealError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    pub device_id: String,
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    pub symbol_len: usize,
    pub cp_len: usize,
    pub num_symbols: usize,
    pub n_frames: usize,
    /// Bits file, relative to the sidecar's directory.
    pub bits_file: String,
    /// Generator seed, emulated captures only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Ground-truth CFO in subcarrier spacings, emulated captures only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta: Option<f64>,
}

impl CaptureMeta {
    pub fn frame_config(&self) -> Result<OfdmConfig> {
        Ok(OfdmConfig::new(self.symbol_len, self.cp_len, self.num_symbols, self.sample_rate_hz)?)
    }

    pub fn n_samples(&self) -> Result<usize> {
        Ok(self.n_frames * self.frame_config()?.frame_len())
    }
}

/// A capture in memory: samples, sidecar and transmitted bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub samples: ComplexBuffer,
    pub meta: CaptureMeta,
    pub bits: BitStream,
}

impl Capture {
    /// `(frame samples, frame bits)` for every frame in order.
    pub fn frames(&self) -> Result<Vec<(&[Complex64], BitStream)>> {
        let cfg = self.meta.frame_config()?;
        let (fl, bl) = (cfg.frame_len(), cfg.bits_per_frame());
        Ok((0..self.meta.n_frames)
            .map(|i| (&self.samples[i * fl..(i + 1) * fl], self.bits.slice(i * bl, bl)))
            .collect())
    }

    fn check(&self, path: &Path) -> Result<()> {
        let cfg = self.meta.frame_config()?;
        if self.meta.n_frames == 0 {
            return Err(Sim2RealError::capture(path, "n_frames is zero"));
        }
        let want = self.meta.n_frames * cfg.frame_len();
        if self.samples.len() != want {
            return Err(Sim2RealError::capture(
                path,
                format!("{} frames need {want} samples, data has {}", self.meta.n_frames, self.samples.len()),
            ));
        }
        let want_bits = self.meta.n_frames * cfg.bits_per_frame();
        if self.bits.len() != want_bits {
            return Err(Sim2RealError::capture(path, format!("expected {want_bits} bits, got {}", self.bits.len())));
        }
        Ok(())
    }
}

pub fn data_path(meta_path: &Path) -> PathBuf {
    meta_path.with_extension("cf32")
}

/// Writes `<dir>/<stem>.cf32`, `<dir>/<stem>.meta` and the bits file, and
/// returns the sidecar path. Samples are stored as `f32`.
pub fn write_capture(dir: &Path, stem: &str, capture: &Capture) -> Result<PathBuf> {
    let meta_path = dir.join(format!("{stem}.meta"));
    capture.check(&meta_path)?;
    if capture.meta.seed.is_some_and(|s| i64::try_from(s).is_err()) {
        return Err(Sim2RealError::Config("capture seed must fit in a signed 64-bit integer".into()));
    }
    let mut data = Vec::with_capacity(capture.samples.len() * 8);
    for s in capture.samples.iter() {
        data.extend_from_slice(&(s.re as f32).to_le_bytes());
        data.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    let text = toml::to_string(&capture.meta).map_err(|e| Sim2RealError::Config(e.to_string()))?;
    let bits_path = dir.join(&capture.meta.bits_file);
    let data_path = data_path(&meta_path);
    fs::write(&data_path, data).map_err(|e| Sim2RealError::io(&data_path, e))?;
    fs::write(&bits_path, capture.bits.to_packed_bytes()).map_err(|e| Sim2RealError::io(&bits_path, e))?;
    fs::write(&meta_path, text).map_err(|e| Sim2RealError::io(&meta_path, e))?;
    Ok(meta_path)
}

/// Reads a capture given its sidecar path.
pub fn ingest_capture(meta_path: &Path) -> Result<Capture> {
    let text = fs::read_to_string(meta_path).map_err(|e| Sim2RealError::io(meta_path, e))?;
    let meta: CaptureMeta = toml::from_str(&text).map_err(|e| Sim2RealError::capture(meta_path, e.message().to_string()))?;
    let cfg = meta.frame_config()?;

    let data_path = data_path(meta_path);
    let raw = fs::read(&data_path).map_err(|e| Sim2RealError::io(&data_path, e))?;
    if raw.len() % 4 != 0 {
        return Err(Sim2RealError::capture(&data_path, format!("{} bytes is not a whole number of floats", raw.len())));
    }
    if raw.len() % 8 != 0 {
        return Err(Sim2RealError::capture(&data_path, "odd float count: I/Q pairs are incomplete"));
    }
    let samples: Vec<Complex64> = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(f64::from(re), f64::from(im))
        })
        .collect();
    let samples = ComplexBuffer::new(samples).map_err(|e| Sim2RealError::capture(&data_path, e.to_string()))?;

    let bits_path = meta_path.parent().unwrap_or(Path::new(".")).join(&meta.bits_file);
    let packed = fs::read(&bits_path).map_err(|e| Sim2RealError::io(&bits_path, e))?;
    let n_bits = meta.n_frames * cfg.bits_per_frame();
    if packed.len() != n_bits.div_ceil(8) {
        return Err(Sim2RealError::capture(
            &bits_path,
            format!("{} bytes cannot hold exactly {n_bits} bits", packed.len()),
        ));
    }
    let bits = BitStream::from_packed_bytes(&packed, n_bits)?;
    let capture = Capture { samples, meta, bits };
    capture.check(meta_path)?;
    Ok(capture)
}
