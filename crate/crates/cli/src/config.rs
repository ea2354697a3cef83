//! Run configuration: a TOML file, optionally overridden by flags. Manifests
//! are configs with an extra `[run]` table, so any manifest can be replayed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cfo_core::impairments::load_profiles;
use cfo_core::{DeviceProfile, OfdmConfig};
use cfo_nn::TrainConfig;
use cfo_sim2real::{FineTuneConfig, SimDatasetSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SWEEP_SNR_DB: [f64; 5] = [0.0, 3.0, 6.0, 9.0, 12.0];
pub const DEFAULT_LINK_SNR_DB: f64 = 10.0;
pub const TRIALS_CP_ONLY: usize = 10_000;
pub const TRIALS_WITH_DNN: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overwrites the nested dataset, training and fine-tuning
    /// seeds when the run is resolved.
    pub seed: u64,
    /// Unset means the command's default; an empty list is an error.
    pub snr_db: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    /// Fine-tuned checkpoint per device id.
    pub finetuned: BTreeMap<String, PathBuf>,
    /// Capture sidecar (`.meta`) paths.
    pub captures: Vec<PathBuf>,
    /// Device profiles to emulate when no captures are given.
    pub profiles: Vec<String>,
    /// Extra profile definitions (TOML, one table per profile).
    pub profile_file: Option<PathBuf>,
    /// Frames per emulated capture.
    pub n_frames: usize,
    /// CFO source for `constellation`: `dnn`, `cp`, `true` or `none`.
    pub method: Option<String>,
    pub ofdm: OfdmConfig,
    pub dataset: SimDatasetSpec,
    pub train: TrainConfig,
    pub finetune: FineTuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            snr_db: None,
            trials: None,
            checkpoint: None,
            finetuned: BTreeMap::new(),
            captures: Vec::new(),
            profiles: Vec::new(),
            profile_file: None,
            n_frames: 1000,
            method: None,
            ofdm: OfdmConfig::default(),
            dataset: SimDatasetSpec::default(),
            train: TrainConfig::default(),
            finetune: FineTuneConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config or a manifest.
    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let command = match table.remove("run") {
            Some(toml::Value::Table(run)) => run.get("command").and_then(|c| c.as_str()).map(str::to_owned),
            Some(_) => bail!("{}: `run` must be a table", path.display()),
            None => None,
        };
        let cfg = Self::deserialize(table).with_context(|| format!("invalid config {}", path.display()))?;
        Ok((cfg, command))
    }

    /// Propagates the master seed into the nested configurations.
    pub fn resolved(mut self) -> Self {
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        self.finetune.seed = self.seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn snr_list(&self, default: &[f64]) -> Result<Vec<f64>> {
        match &self.snr_db {
            None => Ok(default.to_vec()),
            Some(v) if v.is_empty() => bail!("the SNR list is empty"),
            Some(v) if v.iter().any(|s| !s.is_finite()) => bail!("SNR values must be finite"),
            Some(v) => Ok(v.clone()),
        }
    }

    /// The single SNR used by link-level commands.
    pub fn link_snr(&self) -> Result<f64> {
        let list = self.snr_list(&[DEFAULT_LINK_SNR_DB])?;
        if list.len() != 1 {
            bail!("this command takes exactly one SNR, got {}", list.len());
        }
        Ok(list[0])
    }

    pub fn profile(&self, name: &str) -> Result<DeviceProfile> {
        if let Some(path) = &self.profile_file {
            let custom = load_profiles(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(p) = custom.into_iter().find(|p| p.name == name) {
                return Ok(p);
            }
        }
        DeviceProfile::builtin(name).with_context(|| {
            format!("unknown profile `{name}` (built in: {})", DeviceProfile::builtin_names().join(", "))
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_manifest_table_ignored() {
        let cfg = RunConfig {
            seed: 5,
            snr_db: Some(vec![0.0, 3.5]),
            profiles: vec!["lowcost".into()],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        let text = format!("{}\n[run]\ncommand = \"crlb\"\n", cfg.to_toml());
        std::fs::write(&path, text).unwrap();
        let (back, command) = RunConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(command.as_deref(), Some("crlb"));
    }

    #[test]
    fn partial_nested_tables_fill_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        let text = "seed = 7\n[dataset]\nn_train = 500\nsnr_db = { lo = 0.0, hi = 30.0 }\n\
                    [train]\nepochs = 2\n[finetune]\nlearning_rate = 1e-4\n";
        std::fs::write(&path, text).unwrap();
        let (cfg, command) = RunConfig::load(&path).unwrap();
        assert!(command.is_none());
        let cfg = cfg.resolved();
        assert_eq!(cfg.dataset.n_train, 500);
        assert_eq!(cfg.dataset.n_val, SimDatasetSpec::default().n_val);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.finetune.epochs, FineTuneConfig::default().epochs);
        assert_eq!(cfg.ofdm, OfdmConfig::default());

        std::fs::write(&path, "[train]\nepoch = 2\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn snr_lists() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.snr_list(&DEFAULT_SWEEP_SNR_DB).unwrap().len(), 5);
        assert_eq!(cfg.link_snr().unwrap(), 10.0);
        let empty = RunConfig { snr_db: Some(vec![]), ..Default::default() };
        assert!(empty.snr_list(&DEFAULT_SWEEP_SNR_DB).is_err());
        let two = RunConfig { snr_db: Some(vec![1.0, 2.0]), ..Default::default() };
        assert!(two.link_snr().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "sede = 3\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn master_seed_propagates() {
        let cfg = RunConfig { seed: 42, ..Default::default() }.resolved();
        assert_eq!((cfg.dataset.seed, cfg.train.seed, cfg.finetune.seed), (42, 42, 42));
    }
}
