//! Channel and receiver-hardware impairments.
//!
//! Each operation is a pure function of its inputs plus, where noted, a
//! caller-supplied generator. [`render_capture`] composes them into the
//! signal a particular receiver would record:
//!
//! multipath → SFO → CFO → phase noise → IQ imbalance → AWGN.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::signal::{mean_power, ComplexBuffer, OfdmConfig};

/// Half-width of the windowed-sinc resampling kernel (16 taps in total).
const SINC_HALF_TAPS: i64 = 8;

/// Normalized CFO in units of the subcarrier spacing `fs / K`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(pub f64);

impl Theta {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_hz(self, cfg: &OfdmConfig) -> f64 {
        self.0 * cfg.sample_rate_hz / cfg.symbol_len as f64
    }

    pub fn from_hz(hz: f64, cfg: &OfdmConfig) -> Self {
        Theta(hz * cfg.symbol_len as f64 / cfg.sample_rate_hz)
    }
}

/// Complex tap gains of a static multipath channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTaps {
    taps: Vec<Complex64>,
}

/// How random channels are drawn: `L` uniform in `[min_taps, max_taps]`,
/// tap power proportional to `exp(-l / decay_samples)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultipathSpec {
    pub min_taps: usize,
    pub max_taps: usize,
    pub decay_samples: f64,
}

impl Default for MultipathSpec {
    fn default() -> Self {
        Self {
            min_taps: 1,
            max_taps: 8,
            decay_samples: 2.0,
        }
    }
}

impl MultipathSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_taps == 0 || self.min_taps > self.max_taps {
            return Err(CoreError::InvalidParameter(format!(
                "tap range [{}, {}] is empty or starts at zero",
                self.min_taps, self.max_taps
            )));
        }
        if !(self.decay_samples > 0.0) {
            return Err(CoreError::InvalidParameter("decay_samples must be positive".into()));
        }
        Ok(())
    }
}

impl ChannelTaps {
    pub fn new(taps: Vec<Complex64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        ComplexBuffer::new(taps.clone())?;
        Ok(Self { taps })
    }

    /// The single unit tap.
    pub fn identity() -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
        }
    }

    /// Rayleigh taps with an exponential power-delay profile, scaled to unit
    /// total power.
    pub fn random<R: Rng + ?Sized>(spec: &MultipathSpec, rng: &mut R) -> Self {
        let len = rng.random_range(spec.min_taps..=spec.max_taps);
        let mut taps: Vec<Complex64> = (0..len)
            .map(|l| {
                let sigma = (-(l as f64) / spec.decay_samples).exp().sqrt() * std::f64::consts::FRAC_1_SQRT_2;
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re * sigma, im * sigma)
            })
            .collect();
        let power: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
        let scale = 1.0 / power.sqrt();
        taps.iter_mut().for_each(|t| *t *= scale);
        Self { taps }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn power(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    fn check_fits(&self, cfg: &OfdmConfig) -> Result<()> {
        if self.taps.len() > cfg.cp_len {
            return Err(CoreError::ChannelTooLong {
                taps: self.taps.len(),
                cp_len: cfg.cp_len,
            });
        }
        Ok(())
    }
}

/// Received-SNR specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(CoreError::InvalidParameter("snr_db must be finite".into()));
        }
        Ok(Self { snr_db })
    }
}

/// Parametric receiver fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub sfo_ppm: f64,
    pub carrier_hz: f64,
    /// Local-oscillator error; the resulting CFO is `lo_ppm * 1e-6 * carrier_hz`.
    pub lo_ppm: f64,
    #[serde(default)]
    pub phase_noise_linewidth_hz: f64,
    #[serde(default = "unit_gain")]
    pub iq_gain: f64,
    #[serde(default)]
    pub iq_phase_rad: f64,
}

fn unit_gain() -> f64 {
    1.0
}

pub const DEFAULT_CARRIER_HZ: f64 = 2.4e9;

impl DeviceProfile {
    /// No impairment at all.
    pub fn neutral() -> Self {
        Self {
            name: "neutral".into(),
            sfo_ppm: 0.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_ppm: 0.0,
            phase_noise_linewidth_hz: 0.0,
            iq_gain: 1.0,
            iq_phase_rad: 0.0,
        }
    }

    pub fn stable() -> Self {
        Self {
            name: "stable".into(),
            sfo_ppm: 0.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_ppm: 0.5,
            phase_noise_linewidth_hz: 10.0,
            iq_gain: 1.005,
            iq_phase_rad: 0.5_f64.to_radians(),
        }
    }

    pub fn mid() -> Self {
        Self {
            name: "mid".into(),
            sfo_ppm: 0.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_ppm: 1.5,
            phase_noise_linewidth_hz: 100.0,
            iq_gain: 1.02,
            iq_phase_rad: 1.0_f64.to_radians(),
        }
    }

    /// A 2.5 ppm oscillator with heavy phase noise, strong IQ mismatch and a
    /// sampling clock at the edge of the simulated range.
    pub fn lowcost() -> Self {
        Self {
            name: "lowcost".into(),
            sfo_ppm: 20.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_ppm: 2.5,
            phase_noise_linewidth_hz: 500.0,
            iq_gain: 1.1,
            iq_phase_rad: 3.0_f64.to_radians(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "neutral" => Some(Self::neutral()),
            "stable" => Some(Self::stable()),
            "mid" => Some(Self::mid()),
            "lowcost" => Some(Self::lowcost()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["neutral", "stable", "mid", "lowcost"]
    }

    pub fn cfo_hz(&self) -> f64 {
        self.lo_ppm * 1e-6 * self.carrier_hz
    }

    pub fn theta(&self, cfg: &OfdmConfig) -> Theta {
        Theta::from_hz(self.cfo_hz(), cfg)
    }

    pub fn validate(&self, cfg: &OfdmConfig) -> Result<()> {
        let fields = [
            ("sfo_ppm", self.sfo_ppm),
            ("carrier_hz", self.carrier_hz),
            ("lo_ppm", self.lo_ppm),
            ("phase_noise_linewidth_hz", self.phase_noise_linewidth_hz),
            ("iq_gain", self.iq_gain),
            ("iq_phase_rad", self.iq_phase_rad),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("{name} is not finite")));
        }
        if self.iq_gain <= 0.0 {
            return Err(CoreError::InvalidParameter("iq_gain must be positive".into()));
        }
        if self.phase_noise_linewidth_hz < 0.0 {
            return Err(CoreError::InvalidParameter("phase noise linewidth must be non-negative".into()));
        }
        if self.sfo_ppm.abs() >= 1000.0 {
            return Err(CoreError::InvalidParameter("|sfo_ppm| must be below 1000".into()));
        }
        let theta = self.theta(cfg).value();
        if theta.abs() >= 0.5 {
            return Err(CoreError::InvalidParameter(format!(
                "profile '{}' implies |theta| = {:.3} >= 0.5 (not identifiable)",
                self.name,
                theta.abs()
            )));
        }
        Ok(())
    }
}

/// Parses a profile file: one table per profile, e.g.
///
/// ```toml
/// [lowcost]
/// lo_ppm = 2.5
/// carrier_hz = 2.4e9
/// ```
pub fn parse_profiles(text: &str) -> Result<Vec<DeviceProfile>> {
    let tables: BTreeMap<String, DeviceProfile> =
        toml::from_str(text).map_err(|e| CoreError::ProfileConfig(e.to_string()))?;
    Ok(tables
        .into_iter()
        .map(|(name, mut p)| {
            p.name = name;
            p
        })
        .collect())
}

pub fn load_profiles(path: &Path) -> Result<Vec<DeviceProfile>> {
    parse_profiles(&std::fs::read_to_string(path)?)
}

/// `y[n] = x[n] exp(j 2π θ (n + start_index) / K)`.
pub fn apply_cfo(x: &[Complex64], theta: Theta, cfg: &OfdmConfig, start_index: usize) -> ComplexBuffer {
    let step = 2.0 * PI * theta.value() / cfg.symbol_len as f64;
    let out = x
        .iter()
        .enumerate()
        .map(|(n, &v)| v * Complex64::from_polar(1.0, step * (n + start_index) as f64))
        .collect();
    ComplexBuffer::from_finite(out)
}

/// Linear convolution with the channel, truncated to the input length.
pub fn apply_multipath(x: &[Complex64], h: &ChannelTaps, cfg: &OfdmConfig) -> Result<ComplexBuffer> {
    h.check_fits(cfg)?;
    let taps = h.taps();
    let out = (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(l, &t)| t * x[n - l])
                .sum()
        })
        .collect();
    Ok(ComplexBuffer::from_finite(out))
}

/// Per-symbol circular convolution: every `K+G` block is filtered as if it
/// were preceded by its own cyclic extension.
///
/// This is the inter-symbol-interference-free channel under which the prefix
/// stays an exact copy of the symbol tail. Linear convolution matches it on
/// every sample except the first `L-1` prefix samples of each symbol.
pub fn apply_multipath_cyclic(x: &[Complex64], h: &ChannelTaps, cfg: &OfdmConfig) -> Result<ComplexBuffer> {
    h.check_fits(cfg)?;
    let stride = cfg.symbol_stride();
    if x.len() % stride != 0 {
        return Err(CoreError::LengthMismatch {
            expected: x.len().div_ceil(stride) * stride,
            actual: x.len(),
        });
    }
    let (k, g) = (cfg.symbol_len, cfg.cp_len);
    let taps = h.taps();
    let mut out = Vec::with_capacity(x.len());
    for block in x.chunks(stride) {
        let body = &block[g..];
        for p in 0..stride {
            // Position p maps to body index (p - G) mod K.
            let acc = taps
                .iter()
                .enumerate()
                .map(|(l, &t)| t * body[(p + 2 * k - g - l) % k])
                .sum();
            out.push(acc);
        }
    }
    Ok(ComplexBuffer::from_finite(out))
}

/// Adds circular complex Gaussian noise at `spec.snr_db` relative to the
/// measured mean power of `x`.
pub fn add_awgn<R: Rng + ?Sized>(x: &[Complex64], spec: &NoiseSpec, rng: &mut R) -> Result<ComplexBuffer> {
    let p = mean_power(x);
    if p <= 0.0 {
        return Err(CoreError::ZeroPower);
    }
    let sigma = (p / 10f64.powf(spec.snr_db / 10.0) / 2.0).sqrt();
    let out = x
        .iter()
        .map(|&v| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            v + Complex64::new(re * sigma, im * sigma)
        })
        .collect();
    Ok(ComplexBuffer::from_finite(out))
}

/// Wiener phase noise: `φ[0] = 0`, `φ[n] = φ[n-1] + w[n]`,
/// `w ~ N(0, 2π linewidth / fs)`.
pub fn apply_phase_noise<R: Rng + ?Sized>(
    x: &[Complex64],
    linewidth_hz: f64,
    fs: f64,
    rng: &mut R,
) -> Result<ComplexBuffer> {
    if !(linewidth_hz >= 0.0) || !linewidth_hz.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "phase noise linewidth must be finite and non-negative, got {linewidth_hz}"
        )));
    }
    if linewidth_hz == 0.0 {
        return Ok(ComplexBuffer::from_finite(x.to_vec()));
    }
    let step = Normal::new(0.0, (2.0 * PI * linewidth_hz / fs).sqrt())
        .map_err(|e| CoreError::InvalidParameter(e.to_string()))?;
    let mut phi = 0.0;
    let out = x
        .iter()
        .enumerate()
        .map(|(n, &v)| {
            if n > 0 {
                phi += step.sample(rng);
            }
            v * Complex64::from_polar(1.0, phi)
        })
        .collect();
    Ok(ComplexBuffer::from_finite(out))
}

/// Mixing coefficients `(μ, ν)` of the receiver IQ-imbalance model.
pub fn iq_coefficients(gain: f64, phase_rad: f64) -> (Complex64, Complex64) {
    let mu = (Complex64::new(1.0, 0.0) + gain * Complex64::from_polar(1.0, -phase_rad)) / 2.0;
    let nu = (Complex64::new(1.0, 0.0) - gain * Complex64::from_polar(1.0, phase_rad)) / 2.0;
    (mu, nu)
}

/// `y = μ x + ν conj(x)`.
pub fn apply_iq_imbalance(x: &[Complex64], gain: f64, phase_rad: f64) -> Result<ComplexBuffer> {
    if !(gain > 0.0) || !gain.is_finite() || !phase_rad.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "IQ gain must be positive and finite, got {gain}"
        )));
    }
    let (mu, nu) = iq_coefficients(gain, phase_rad);
    Ok(ComplexBuffer::from_finite(
        x.iter().map(|&v| mu * v + nu * v.conj()).collect(),
    ))
}

fn blackman_sinc(d: f64) -> f64 {
    let half = SINC_HALF_TAPS as f64;
    if d.abs() >= half {
        return 0.0;
    }
    let window = 0.42 + 0.5 * (PI * d / half).cos() + 0.08 * (2.0 * PI * d / half).cos();
    let sinc = if d == 0.0 { 1.0 } else { (PI * d).sin() / (PI * d) };
    sinc * window
}

/// Band-limited value of `x` at fractional index `t`; samples outside the
/// buffer count as zero.
fn interpolate(x: &[Complex64], t: f64) -> Complex64 {
    let base = t.floor();
    let frac = t - base;
    let base = base as i64;
    if frac == 0.0 {
        return usize::try_from(base)
            .ok()
            .and_then(|i| x.get(i).copied())
            .unwrap_or_default();
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for k in (base - SINC_HALF_TAPS + 1)..=(base + SINC_HALF_TAPS) {
        if k < 0 || k as usize >= x.len() {
            continue;
        }
        acc += x[k as usize] * blackman_sinc(t - k as f64);
    }
    acc
}

/// Resamples `x` at instants `m (1 + ppm 1e-6)` for `m < out_len`.
pub fn resample(x: &[Complex64], ppm: f64, out_len: usize) -> ComplexBuffer {
    let ratio = 1.0 + ppm * 1e-6;
    ComplexBuffer::from_finite((0..out_len).map(|m| interpolate(x, m as f64 * ratio)).collect())
}

/// Sampling-frequency offset: fractional resampling at ratio `1 + ppm 1e-6`
/// with a 16-tap Blackman-windowed sinc. Output length is
/// `floor(N / (1 + ppm 1e-6))`.
pub fn apply_sfo(x: &[Complex64], ppm: f64) -> Result<ComplexBuffer> {
    if !(ppm.abs() < 1000.0) {
        return Err(CoreError::InvalidParameter(format!("|ppm| must be below 1000, got {ppm}")));
    }
    let out_len = (x.len() as f64 / (1.0 + ppm * 1e-6)).floor() as usize;
    Ok(resample(x, ppm, out_len))
}

/// Renders what a receiver with `profile` records for a burst of frames.
///
/// Every frame passes through the channel and the sampling-clock offset as a
/// separate burst, so frame boundaries stay aligned and each frame keeps its
/// nominal length. CFO and phase noise then run continuously over the whole
/// capture, followed by IQ imbalance and AWGN at `noise.snr_db` relative to
/// the impaired signal power. Returns the capture and its true CFO.
pub fn render_capture<R: Rng + ?Sized>(
    frames: &[ComplexBuffer],
    profile: &DeviceProfile,
    h: &ChannelTaps,
    noise: &NoiseSpec,
    cfg: &OfdmConfig,
    rng: &mut R,
) -> Result<(ComplexBuffer, Theta)> {
    if frames.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    profile.validate(cfg)?;
    let frame_len = cfg.frame_len();
    let mut stream = Vec::with_capacity(frames.len() * frame_len);
    for frame in frames {
        if frame.len() != frame_len {
            return Err(CoreError::LengthMismatch {
                expected: frame_len,
                actual: frame.len(),
            });
        }
        let faded = apply_multipath(frame, h, cfg)?;
        let burst = if profile.sfo_ppm == 0.0 {
            faded
        } else {
            resample(&faded, profile.sfo_ppm, frame_len)
        };
        stream.extend(burst.into_inner());
    }
    let theta = profile.theta(cfg);
    let rotated = apply_cfo(&stream, theta, cfg, 0);
    let noisy_lo = apply_phase_noise(&rotated, profile.phase_noise_linewidth_hz, cfg.sample_rate_hz, rng)?;
    let mixed = apply_iq_imbalance(&noisy_lo, profile.iq_gain, profile.iq_phase_rad)?;
    let received = add_awgn(&mixed, noise, rng)?;
    Ok((received, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::{build_frame, dft, BitStream};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = stream_rng(seed, 9);
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn cfo_quarter_turn_per_sample() {
        let cfg = OfdmConfig::new(4, 1, 1, 1.0).unwrap();
        let y = apply_cfo(&[c(1.0, 0.0); 4], Theta(1.0), &cfg, 0);
        let expected = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        assert!(max_dev(&y, &expected) < 1e-15);
    }

    #[test]
    fn cfo_zero_and_composition() {
        let cfg = OfdmConfig::default();
        let x = random_signal(1600, 1);
        assert_eq!(apply_cfo(&x, Theta(0.0), &cfg, 0).as_slice(), x.as_slice());
        let two = apply_cfo(&apply_cfo(&x, Theta(0.13), &cfg, 5), Theta(-0.31), &cfg, 5);
        let one = apply_cfo(&x, Theta(0.13 - 0.31), &cfg, 5);
        assert!(max_dev(&two, &one) < 1e-12);
        let e0: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let e1: f64 = one.iter().map(|v| v.norm_sqr()).sum();
        assert_abs_diff_eq!(e0, e1, epsilon = 1e-9 * e0);
    }

    #[test]
    fn multipath_simple_channels() {
        let cfg = OfdmConfig::default();
        let x = random_signal(50, 2);
        assert_eq!(apply_multipath(&x, &ChannelTaps::identity(), &cfg).unwrap().as_slice(), x.as_slice());
        let delay = ChannelTaps::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let y = apply_multipath(&x, &delay, &cfg).unwrap();
        assert_eq!(y[0], c(0.0, 0.0));
        assert_eq!(&y[1..], &x[..49]);
    }

    #[test]
    fn multipath_rejects_channel_longer_than_cp() {
        let cfg = OfdmConfig::new(8, 2, 1, 1.0).unwrap();
        let h = ChannelTaps::new(vec![c(1.0, 0.0); 3]).unwrap();
        assert!(matches!(
            apply_multipath(&[c(1.0, 0.0); 10], &h, &cfg),
            Err(CoreError::ChannelTooLong { taps: 3, cp_len: 2 })
        ));
    }

    #[test]
    fn cyclic_channel_agrees_with_linear_outside_isi_region() {
        let cfg = OfdmConfig::default();
        let mut rng = stream_rng(3, 0);
        let frame = build_frame(&BitStream::random(cfg.bits_per_frame(), &mut rng), &cfg).unwrap();
        let h = ChannelTaps::random(&MultipathSpec { min_taps: 8, max_taps: 8, decay_samples: 3.0 }, &mut rng);
        let lin = apply_multipath(&frame, &h, &cfg).unwrap();
        let cyc = apply_multipath_cyclic(&frame, &h, &cfg).unwrap();
        for (n, (a, b)) in lin.iter().zip(cyc.iter()).enumerate() {
            let p = n % cfg.symbol_stride();
            if p >= h.len() - 1 {
                assert!((a - b).norm() < 1e-12, "sample {n}");
            }
        }
        // Prefix stays an exact copy of the tail under the cyclic channel.
        for i in 0..cfg.num_symbols {
            let base = i * cfg.symbol_stride();
            assert!(max_dev(&cyc[base..base + 32], &cyc[base + 128..base + 160]) < 1e-12);
        }
    }

    #[test]
    fn random_channel_is_unit_power_and_bounded() {
        let mut rng = stream_rng(4, 0);
        let spec = MultipathSpec::default();
        for _ in 0..50 {
            let h = ChannelTaps::random(&spec, &mut rng);
            assert!((1..=8).contains(&h.len()));
            assert_abs_diff_eq!(h.power(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn awgn_vanishes_at_huge_snr_and_is_deterministic() {
        let x = random_signal(256, 5);
        let y = add_awgn(&x, &NoiseSpec::new(300.0).unwrap(), &mut stream_rng(1, 1)).unwrap();
        let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max_dev(&x, &y) <= 1e-12 * scale);
        let spec = NoiseSpec::new(5.0).unwrap();
        let a = add_awgn(&x, &spec, &mut stream_rng(9, 1)).unwrap();
        let b = add_awgn(&x, &spec, &mut stream_rng(9, 1)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            add_awgn(&[c(0.0, 0.0); 4], &spec, &mut stream_rng(9, 1)),
            Err(CoreError::ZeroPower)
        ));
    }

    #[test]
    fn awgn_hits_requested_snr() {
        let x = vec![c(1.0, 0.0); 1_000_000];
        let y = add_awgn(&x, &NoiseSpec::new(10.0).unwrap(), &mut stream_rng(11, 0)).unwrap();
        let noise_power = mean_power(&y.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let snr = 10.0 * (1.0 / noise_power).log10();
        assert!((snr - 10.0).abs() < 0.1, "measured {snr}");
    }

    #[test]
    fn phase_noise_identity_and_modulus() {
        let x = random_signal(500, 6);
        let mut rng = stream_rng(1, 2);
        assert_eq!(apply_phase_noise(&x, 0.0, 1.92e6, &mut rng).unwrap().as_slice(), x.as_slice());
        let y = apply_phase_noise(&x, 500.0, 1.92e6, &mut rng).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a.norm(), b.norm(), epsilon = 1e-12);
        }
        assert!(apply_phase_noise(&x, -1.0, 1.92e6, &mut rng).is_err());
    }

    #[test]
    fn phase_noise_variance_grows_linearly() {
        let (lw, fs) = (500.0, 1.92e6);
        let n = 200;
        let x = vec![c(1.0, 0.0); n];
        let trials = 10_000;
        let mut sum_sq = vec![0.0; n];
        let mut rng = stream_rng(12, 0);
        for _ in 0..trials {
            let y = apply_phase_noise(&x, lw, fs, &mut rng).unwrap();
            for (acc, v) in sum_sq.iter_mut().zip(y.iter()) {
                *acc += v.arg().powi(2);
            }
        }
        // Least-squares slope through the origin of Var φ[n] against n.
        let num: f64 = sum_sq.iter().enumerate().map(|(i, s)| i as f64 * s / trials as f64).sum();
        let den: f64 = (0..n).map(|i| (i * i) as f64).sum();
        let slope = num / den;
        let expected = 2.0 * PI * lw / fs;
        assert!((slope / expected - 1.0).abs() < 0.1, "slope {slope} vs {expected}");
    }

    #[test]
    fn iq_coefficients_by_hand() {
        let x = random_signal(32, 7);
        assert_eq!(apply_iq_imbalance(&x, 1.0, 0.0).unwrap().as_slice(), x.as_slice());
        let (mu, nu) = iq_coefficients(1.1, 0.0);
        assert_abs_diff_eq!(mu.re, 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.re, -0.05, epsilon = 1e-15);
        assert!(apply_iq_imbalance(&x, 0.0, 0.0).is_err());
    }

    #[test]
    fn iq_image_tone_power() {
        let n = 64;
        let bin = 5;
        let tone: Vec<Complex64> = (0..n)
            .map(|t| Complex64::from_polar(1.0, 2.0 * PI * (bin * t) as f64 / n as f64))
            .collect();
        let (g, phi) = (1.1, 3.0_f64.to_radians());
        let spectrum = dft(&apply_iq_imbalance(&tone, g, phi).unwrap(), false).unwrap();
        let (mu, nu) = iq_coefficients(g, phi);
        let ratio = spectrum[n - bin].norm_sqr() / spectrum[bin].norm_sqr();
        assert_abs_diff_eq!(ratio, nu.norm_sqr() / mu.norm_sqr(), epsilon = 1e-12);
    }

    #[test]
    fn sfo_identity_and_length() {
        let x = random_signal(100, 8);
        assert_eq!(apply_sfo(&x, 0.0).unwrap().as_slice(), x.as_slice());
        let long = vec![c(1.0, 0.0); 1_000_000];
        let y = apply_sfo(&long, 100.0).unwrap();
        assert!((y.len() as i64 - 999_900).abs() <= 1);
        assert!(apply_sfo(&x, 1000.0).is_err());
    }

    #[test]
    fn sfo_scales_tone_frequency() {
        let n = 4096;
        let f = 0.1;
        let ppm = 800.0;
        let tone: Vec<Complex64> = (0..n).map(|t| Complex64::from_polar(1.0, 2.0 * PI * f * t as f64)).collect();
        let y = apply_sfo(&tone, ppm).unwrap();
        let m = y.len();
        let spectrum = dft(&y, false).unwrap();
        let peak = (0..m).max_by(|&a, &b| spectrum[a].norm().total_cmp(&spectrum[b].norm())).unwrap();
        let expected_bin = f * (1.0 + ppm * 1e-6) * m as f64;
        assert!((peak as f64 - expected_bin).abs() <= 1.0, "peak {peak} vs {expected_bin}");
    }

    #[test]
    fn lowcost_profile_theta() {
        let cfg = OfdmConfig::default();
        assert_abs_diff_eq!(DeviceProfile::lowcost().theta(&cfg).value(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(DeviceProfile::lowcost().cfo_hz(), 6000.0, epsilon = 1e-9);
        for name in DeviceProfile::builtin_names() {
            DeviceProfile::builtin(name).unwrap().validate(&cfg).unwrap();
        }
        let mut too_fast = DeviceProfile::lowcost();
        too_fast.lo_ppm = 4.0;
        assert!(too_fast.validate(&cfg).is_err());
    }

    #[test]
    fn neutral_capture_is_transparent() {
        let cfg = OfdmConfig::default();
        let mut rng = stream_rng(13, 0);
        let frames: Vec<_> = (0..3)
            .map(|_| build_frame(&BitStream::random(cfg.bits_per_frame(), &mut rng), &cfg).unwrap())
            .collect();
        let (cap, theta) = render_capture(
            &frames,
            &DeviceProfile::neutral(),
            &ChannelTaps::identity(),
            &NoiseSpec::new(300.0).unwrap(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(theta, Theta(0.0));
        let clean = ComplexBuffer::concat(&frames);
        assert!(max_dev(&cap, &clean) < 1e-9);
    }

    #[test]
    fn capture_is_reproducible() {
        let cfg = OfdmConfig::default();
        let frames: Vec<_> = (0..2)
            .map(|i| build_frame(&BitStream::random(cfg.bits_per_frame(), &mut stream_rng(14, i)), &cfg).unwrap())
            .collect();
        let h = ChannelTaps::random(&MultipathSpec::default(), &mut stream_rng(15, 0));
        let noise = NoiseSpec::new(10.0).unwrap();
        let a = render_capture(&frames, &DeviceProfile::lowcost(), &h, &noise, &cfg, &mut stream_rng(16, 0)).unwrap();
        let b = render_capture(&frames, &DeviceProfile::lowcost(), &h, &noise, &cfg, &mut stream_rng(16, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 2 * cfg.frame_len());
    }

    #[test]
    fn profiles_parse_from_sections() {
        let text = r#"
            [bench]
            lo_ppm = 1.0
            carrier_hz = 2.4e9
            phase_noise_linewidth_hz = 50.0
            iq_gain = 1.01
            iq_phase_rad = 0.01
            sfo_ppm = -3.0

            [plain]
            lo_ppm = 0.0
            carrier_hz = 9.0e8
        "#;
        let profiles = parse_profiles(text).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0].name, "bench");
        assert_eq!(profiles[0].sfo_ppm, -3.0);
        assert_eq!(profiles[1].iq_gain, 1.0);
        assert!(parse_profiles("[x]\nlo_ppm = 1.0\n").is_err());
    }
}
