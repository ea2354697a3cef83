//! Running a checkpoint as a CFO estimator.

use cfo_core::{Complex64, OfdmConfig};
use cfo_nn::train::EVAL_BATCH;
use cfo_nn::{Act, CfoNet, Checkpoint, FeatureStats};

use crate::dataset::feature_row;
use crate::error::{Result, Sim2RealError};

const ATTR_SYMBOL_LEN: &str = "ofdm.symbol_len";
const ATTR_CP_LEN: &str = "ofdm.cp_len";
const ATTR_NUM_SYMBOLS: &str = "ofdm.num_symbols";
const ATTR_SAMPLE_RATE: &str = "ofdm.sample_rate_hz";

/// Records the frame geometry the checkpoint's statistics were fitted for.
pub fn store_frame_config(ckpt: &mut Checkpoint, cfg: &OfdmConfig) {
    let a = &mut ckpt.attributes;
    a.insert(ATTR_SYMBOL_LEN.into(), cfg.symbol_len.to_string());
    a.insert(ATTR_CP_LEN.into(), cfg.cp_len.to_string());
    a.insert(ATTR_NUM_SYMBOLS.into(), cfg.num_symbols.to_string());
    // `Display` for f64 round-trips exactly.
    a.insert(ATTR_SAMPLE_RATE.into(), cfg.sample_rate_hz.to_string());
}

/// Frame geometry recorded by [`store_frame_config`].
pub fn stored_frame_config(ckpt: &Checkpoint) -> Result<OfdmConfig> {
    fn get<T: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<T> {
        ckpt.attributes
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Sim2RealError::ConfigMismatch(format!("checkpoint lacks a valid `{key}` attribute")))
    }
    Ok(OfdmConfig::new(
        get(ckpt, ATTR_SYMBOL_LEN)?,
        get(ckpt, ATTR_CP_LEN)?,
        get(ckpt, ATTR_NUM_SYMBOLS)?,
        get(ckpt, ATTR_SAMPLE_RATE)?,
    )?)
}

pub(crate) fn ensure_same_config(expected: &OfdmConfig, found: &OfdmConfig, what: &str) -> Result<()> {
    let same = expected.symbol_len == found.symbol_len
        && expected.cp_len == found.cp_len
        && expected.num_symbols == found.num_symbols
        && expected.sample_rate_hz == found.sample_rate_hz
        && expected.modulation == found.modulation;
    if same {
        Ok(())
    } else {
        Err(Sim2RealError::ConfigMismatch(format!("{what}: checkpoint expects {expected:?}, found {found:?}")))
    }
}

/// A trained network with its input statistics and frame geometry.
pub struct DnnEstimator {
    pub net: CfoNet<f32>,
    pub stats: FeatureStats,
    pub cfg: OfdmConfig,
}

impl DnnEstimator {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = stored_frame_config(ckpt)?;
        if ckpt.stats.dim() != cfg.feature_len() {
            return Err(Sim2RealError::ConfigMismatch(format!(
                "statistics cover {} positions, frames give {}",
                ckpt.stats.dim(),
                cfg.feature_len()
            )));
        }
        Ok(Self { net: ckpt.model()?, stats: ckpt.stats.clone(), cfg })
    }

    /// Standardized network inputs, one row per frame.
    pub fn inputs<F: AsRef<[Complex64]>>(&self, frames: &[F]) -> Result<Vec<f32>> {
        let dim = self.cfg.feature_len();
        let mut out = vec![0.0f32; frames.len() * dim];
        for (frame, dst) in frames.iter().zip(out.chunks_mut(dim)) {
            let row = feature_row(frame.as_ref(), &self.cfg)?;
            self.stats.apply_row(&row, dst);
        }
        Ok(out)
    }

    /// Evaluation-mode CFO estimates in subcarrier spacings.
    pub fn estimate<F: AsRef<[Complex64]>>(&mut self, frames: &[F]) -> Result<Vec<f64>> {
        let dim = self.cfg.feature_len();
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(EVAL_BATCH) {
            let x = Act::new(1, chunk.len(), dim, self.inputs(chunk)?)?;
            out.extend(self.net.predict(x)?.into_iter().map(f64::from));
        }
        Ok(out)
    }
}
