//! Stand-in for over-the-air collection: frames rendered through a device
//! profile and one fixed multipath channel per device.

use std::path::{Path, PathBuf};

use cfo_core::impairments::MultipathSpec;
use cfo_core::rng::item_rng;
use cfo_core::{build_frame, render_capture, BitStream, Complex64, ComplexBuffer, DeviceProfile, NoiseSpec, OfdmConfig};

use crate::capture::{write_capture, Capture, CaptureMeta};
use crate::error::{Result, Sim2RealError};

const DOMAIN_CHANNEL: u16 = 0x200;
const DOMAIN_BITS: u16 = 0x201;
const DOMAIN_RENDER: u16 = 0x202;

/// Stream index identifying a device by name, so each device keeps one
/// channel under a master seed (FNV-1a).
fn device_index(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Renders `n_frames` random-bit frames as `profile` would record them at
/// `snr_db`. Samples are rounded to `f32`, so the result equals what
/// [`crate::capture::ingest_capture`] reads back.
///
/// The multipath channel depends only on `seed` and the device name.
/// `session` selects fresh bits and noise, so separate sessions of one
/// device share its channel but no frames.
pub fn emulate_device(
    profile: &DeviceProfile,
    n_frames: usize,
    snr_db: f64,
    cfg: &OfdmConfig,
    seed: u64,
    session: u64,
) -> Result<Capture> {
    if n_frames == 0 {
        return Err(Sim2RealError::Config("n_frames must be positive".into()));
    }
    if i64::try_from(seed).is_err() {
        return Err(Sim2RealError::Config("seed must fit in a signed 64-bit integer".into()));
    }
    profile.validate(cfg)?;
    let device_id = if profile.name.is_empty() { "device".to_string() } else { profile.name.clone() };
    let h = cfo_core::ChannelTaps::random(&MultipathSpec::default(), &mut item_rng(seed, DOMAIN_CHANNEL, device_index(&device_id)));
    let mut bit_rng = item_rng(seed, DOMAIN_BITS, session);
    let per_frame: Vec<BitStream> = (0..n_frames).map(|_| BitStream::random(cfg.bits_per_frame(), &mut bit_rng)).collect();
    let frames = per_frame.iter().map(|b| build_frame(b, cfg)).collect::<cfo_core::Result<Vec<_>>>()?;
    let noise = NoiseSpec::new(snr_db)?;
    let (rx, theta) = render_capture(&frames, profile, &h, &noise, cfg, &mut item_rng(seed, DOMAIN_RENDER, session))?;
    let quantized: Vec<Complex64> = rx
        .iter()
        .map(|s| Complex64::new(f64::from(s.re as f32), f64::from(s.im as f32)))
        .collect();
    Ok(Capture {
        samples: ComplexBuffer::new(quantized)?,
        meta: CaptureMeta {
            bits_file: format!("{device_id}.bits"),
            device_id,
            sample_rate_hz: cfg.sample_rate_hz,
            carrier_hz: profile.carrier_hz,
            symbol_len: cfg.symbol_len,
            cp_len: cfg.cp_len,
            num_symbols: cfg.num_symbols,
            n_frames,
            seed: Some(seed),
            true_theta: Some(theta.value()),
        },
        bits: BitStream::concat(&per_frame),
    })
}

/// [`emulate_device`] written to `dir` as `<stem>.{cf32,meta,bits}`.
/// Returns the sidecar path.
#[allow(clippy::too_many_arguments)]
pub fn emulate_device_captures(
    profile: &DeviceProfile,
    n_frames: usize,
    snr_db: f64,
    cfg: &OfdmConfig,
    seed: u64,
    session: u64,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    let mut capture = emulate_device(profile, n_frames, snr_db, cfg, seed, session)?;
    capture.meta.bits_file = format!("{stem}.bits");
    write_capture(dir, stem, &capture)
}
