//! Run manifests: the resolved configuration plus a `[run]` table naming
//! the command, build and output digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

/// `<package version>+<git describe>`, or `+unknown` outside a checkout.
pub fn build_identity() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("CFOCAL_GIT_DESCRIBE"))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub build: String,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunRecord {
    /// Hashes every output, which must already exist under `out_dir`.
    pub fn new(command: &str, cfg: &RunConfig, out_dir: &Path, outputs: &[PathBuf]) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for path in outputs {
            let name = path.strip_prefix(out_dir).unwrap_or(path).to_string_lossy().into_owned();
            digests.insert(name, file_sha256(path)?);
        }
        Ok(Self {
            command: command.to_string(),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            build: build_identity(),
            outputs: digests,
        })
    }
}

/// Writes `<out_dir>/<command>.manifest.toml`, readable by
/// [`RunConfig::load`].
pub fn write_manifest(out_dir: &Path, cfg: &RunConfig, record: &RunRecord) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Run<'a> {
        run: &'a RunRecord,
    }
    let text = format!("{}\n{}", cfg.to_toml(), toml::to_string(&Run { run: record })?);
    let path = out_dir.join(format!("{}.manifest.toml", record.command));
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
