//! Library behind the `cfocal` binary. Each command writes CSV or
//! checkpoint outputs and a replayable manifest into an output directory.

pub mod commands;
pub mod config;
pub mod eval;
pub mod manifest;

use anyhow::{bail, Result};
use cfo_core::OfdmConfig;

pub use commands::{run, Command};
pub use config::RunConfig;

/// Errors unless both describe the same frame geometry and modulation.
pub fn ensure_frame_config(expected: &OfdmConfig, found: &OfdmConfig) -> Result<()> {
    if expected.symbol_len != found.symbol_len
        || expected.cp_len != found.cp_len
        || expected.num_symbols != found.num_symbols
        || expected.sample_rate_hz != found.sample_rate_hz
        || expected.modulation != found.modulation
    {
        bail!("frame configuration mismatch: checkpoint expects {expected:?}, got {found:?}");
    }
    Ok(())
}
