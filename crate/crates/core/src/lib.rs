//! OFDM signal layer for per-device CFO calibration.
//!
//! This crate holds everything that is plain signal processing:
//!
//! - [`signal`]: frame geometry, unitary DFT, DQPSK across subcarriers,
//!   cyclic prefix handling, power normalization and BER.
//! - [`impairments`]: CFO, multipath, AWGN, phase noise, IQ imbalance and
//!   sampling-frequency offset, plus the composed per-device capture renderer.
//! - [`estimators`]: the CP phase feature, the classical pooled-correlation
//!   estimator, the Cramér–Rao bound and error statistics.
//!
//! CFO is expressed throughout in units of the subcarrier spacing `fs / K`,
//! so a received sample `n` is rotated by `exp(j 2π θ n / K)`.

pub mod error;
pub mod estimators;
pub mod impairments;
pub mod rng;
pub mod signal;

pub use error::{CoreError, Result};
pub use num_complex::Complex64;

pub use estimators::{
    cp_ml_estimate, cp_phase_features, crlb_hz2, error_stats, hz_to_theta, theta_to_hz,
    CfoEstimate, ErrorStats, PhaseFeature,
};
pub use impairments::{
    add_awgn, apply_cfo, apply_iq_imbalance, apply_multipath, apply_multipath_cyclic,
    apply_phase_noise, apply_sfo, render_capture, ChannelTaps, DeviceProfile, NoiseSpec, Theta,
};
pub use signal::{
    add_cp, ber, build_frame, dft, dqpsk_demodulate, dqpsk_modulate, frame_airtime,
    power_normalize, remove_cp, BitStream, ComplexBuffer, FreqSymbols, Modulation, OfdmConfig,
};
