//! OFDM frame construction and demodulation.
//!
//! A frame is `num_symbols` OFDM symbols, each `K` subcarriers wide with a
//! `G`-sample cyclic prefix. Data is DQPSK-encoded *across subcarriers*:
//! subcarrier 0 of every symbol is a fixed reference at phase π/4 and each
//! following subcarrier advances the phase by a Gray-mapped quadrant, so a
//! symbol carries `2(K-1)` bits and decoding never needs a channel estimate.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::ops::Deref;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Guard added to magnitude products in the soft differential detector.
pub const SOFT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    Dqpsk,
}

/// Frame geometry and sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    /// Samples per OFDM symbol body (`K`), equal to the number of subcarriers.
    pub symbol_len: usize,
    /// Cyclic-prefix length (`G`).
    pub cp_len: usize,
    pub num_symbols: usize,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub modulation: Modulation,
}

impl Default for OfdmConfig {
    /// 128 subcarriers, 32-sample prefix, 10 symbols at 1.92 MS/s.
    fn default() -> Self {
        Self {
            symbol_len: 128,
            cp_len: 32,
            num_symbols: 10,
            sample_rate_hz: 1.92e6,
            modulation: Modulation::Dqpsk,
        }
    }
}

impl OfdmConfig {
    pub fn new(symbol_len: usize, cp_len: usize, num_symbols: usize, sample_rate_hz: f64) -> Result<Self> {
        let cfg = Self {
            symbol_len,
            cp_len,
            num_symbols,
            sample_rate_hz,
            modulation: Modulation::Dqpsk,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbol_len == 0 {
            return Err(CoreError::InvalidConfig("symbol_len must be positive".into()));
        }
        if self.cp_len == 0 || self.cp_len >= self.symbol_len {
            return Err(CoreError::InvalidConfig(format!(
                "cp_len must satisfy 0 < G < K (G={}, K={})",
                self.cp_len, self.symbol_len
            )));
        }
        if self.num_symbols == 0 {
            return Err(CoreError::InvalidConfig("num_symbols must be at least 1".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(CoreError::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        Ok(())
    }

    /// `K + G`.
    pub fn symbol_stride(&self) -> usize {
        self.symbol_len + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.num_symbols * self.symbol_stride()
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * (self.symbol_len - 1)
    }

    pub fn bits_per_frame(&self) -> usize {
        self.bits_per_symbol() * self.num_symbols
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.sample_rate_hz / self.symbol_len as f64
    }

    /// Length of the CP phase feature, `G * num_symbols`.
    pub fn feature_len(&self) -> usize {
        self.cp_len * self.num_symbols
    }
}

/// Time-domain complex baseband samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexBuffer {
    samples: Vec<Complex64>,
}

impl ComplexBuffer {
    /// Wraps samples, rejecting NaN or infinite values.
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(CoreError::NonFinite(i));
        }
        Ok(Self { samples })
    }

    /// Wraps samples produced by finite arithmetic on finite inputs.
    pub(crate) fn from_finite(samples: Vec<Complex64>) -> Self {
        debug_assert!(samples.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        Self { samples }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.samples
    }

    /// Mean of `|x[n]|^2`; zero for an empty buffer.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a ComplexBuffer>>(parts: I) -> Self {
        let samples = parts.into_iter().flat_map(|b| b.samples.iter().copied()).collect();
        Self { samples }
    }
}

impl Deref for ComplexBuffer {
    type Target = [Complex64];

    fn deref(&self) -> &[Complex64] {
        &self.samples
    }
}

impl TryFrom<Vec<Complex64>> for ComplexBuffer {
    type Error = CoreError;

    fn try_from(samples: Vec<Complex64>) -> Result<Self> {
        Self::new(samples)
    }
}

pub(crate) fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// A sequence of bits, one per byte, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct BitStream {
    bits: Vec<u8>,
}

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(CoreError::InvalidParameter(format!("bit {i} is {}, not 0/1", bits[i])));
        }
        Ok(Self { bits })
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random_range(0..2u8)).collect(),
        }
    }

    /// Parses a string of `'0'`/`'1'` characters.
    pub fn from_str_bits(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(CoreError::InvalidParameter(format!("'{other}' is not a bit"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|bits| Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    /// Packs into bytes, most significant bit first; the tail is zero-padded.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i))))
            .collect()
    }

    /// Unpacks the first `len` bits of an MSB-first byte string.
    pub fn from_packed_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(CoreError::LengthMismatch {
                expected: len.div_ceil(8),
                actual: bytes.len(),
            });
        }
        let bits = (0..len).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect();
        Ok(Self { bits })
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            bits: self.bits[start..start + len].to_vec(),
        }
    }

    pub fn concat<'a, I: IntoIterator<Item = &'a BitStream>>(parts: I) -> Self {
        Self {
            bits: parts.into_iter().flat_map(|b| b.bits.iter().copied()).collect(),
        }
    }
}

/// Frequency-domain symbols: `num_symbols` vectors of `K` subcarrier values,
/// stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqSymbols {
    symbol_len: usize,
    data: Vec<Complex64>,
}

impl FreqSymbols {
    pub fn new(symbol_len: usize, data: Vec<Complex64>) -> Result<Self> {
        if symbol_len == 0 || data.is_empty() || data.len() % symbol_len != 0 {
            return Err(CoreError::InvalidParameter(format!(
                "{} values do not form whole symbols of length {symbol_len}",
                data.len()
            )));
        }
        Ok(Self { symbol_len, data })
    }

    pub fn from_symbols(symbols: Vec<Vec<Complex64>>) -> Result<Self> {
        let k = symbols.first().map(Vec::len).ok_or(CoreError::EmptyInput)?;
        if let Some(bad) = symbols.iter().find(|s| s.len() != k) {
            return Err(CoreError::LengthMismatch {
                expected: k,
                actual: bad.len(),
            });
        }
        Self::new(k, symbols.into_iter().flatten().collect())
    }

    pub fn symbol_len(&self) -> usize {
        self.symbol_len
    }

    pub fn num_symbols(&self) -> usize {
        self.data.len() / self.symbol_len
    }

    pub fn symbol(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.symbol_len..(i + 1) * self.symbol_len]
    }

    pub fn symbol_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.symbol_len..(i + 1) * self.symbol_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks(self.symbol_len)
    }

    pub fn as_flat(&self) -> &[Complex64] {
        &self.data
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place unitary DFT (`1/sqrt(N)` in both directions).
pub(crate) fn dft_in_place(x: &mut [Complex64], inverse: bool) {
    let n = x.len();
    fft_plan(n, inverse).process(x);
    let scale = 1.0 / (n as f64).sqrt();
    for v in x.iter_mut() {
        *v *= scale;
    }
}

/// Unitary DFT. `inverse` selects the `+j` kernel.
pub fn dft(x: &[Complex64], inverse: bool) -> Result<ComplexBuffer> {
    if x.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let mut out = x.to_vec();
    dft_in_place(&mut out, inverse);
    Ok(ComplexBuffer::from_finite(out))
}

/// Gray map from a bit pair to the phase-advance quadrant index.
fn pair_to_quadrant(b0: u8, b1: u8) -> usize {
    match (b0, b1) {
        (0, 0) => 0,
        (0, 1) => 1,
        (1, 1) => 2,
        _ => 3,
    }
}

const QUADRANT_BITS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];

/// Maps bits to differential subcarrier symbols, `2(K-1)` bits per OFDM symbol.
pub fn dqpsk_modulate(bits: &BitStream, cfg: &OfdmConfig) -> Result<FreqSymbols> {
    cfg.validate()?;
    let expected = cfg.bits_per_frame();
    if bits.len() != expected {
        return Err(CoreError::LengthMismatch {
            expected,
            actual: bits.len(),
        });
    }
    let k = cfg.symbol_len;
    let mut data = Vec::with_capacity(k * cfg.num_symbols);
    for sym_bits in bits.as_slice().chunks(cfg.bits_per_symbol()) {
        let mut quadrant = 0usize;
        data.push(Complex64::from_polar(1.0, FRAC_PI_4));
        for pair in sym_bits.chunks(2) {
            quadrant = (quadrant + pair_to_quadrant(pair[0], pair[1])) % 4;
            data.push(Complex64::from_polar(1.0, FRAC_PI_4 + quadrant as f64 * FRAC_PI_2));
        }
    }
    FreqSymbols::new(k, data)
}

/// Differential detector across subcarriers.
///
/// Returns hard bits and the unit-normalized soft differentials
/// `Y_k conj(Y_{k-1}) / (|Y_k||Y_{k-1}| + eps)`, `K-1` per OFDM symbol.
pub fn dqpsk_demodulate(y: &FreqSymbols) -> (BitStream, Vec<Complex64>) {
    let k = y.symbol_len();
    let mut soft = Vec::with_capacity(y.num_symbols() * k.saturating_sub(1));
    for sym in y.iter() {
        for w in sym.windows(2) {
            soft.push(soft_differential(w[1], w[0]));
        }
    }
    let mut bits = Vec::with_capacity(2 * soft.len());
    for d in &soft {
        let (b0, b1) = QUADRANT_BITS[quadrant_of(*d)];
        bits.push(b0);
        bits.push(b1);
    }
    (BitStream { bits }, soft)
}

/// Unit-normalized `cur · conj(prev)`.
pub fn soft_differential(cur: Complex64, prev: Complex64) -> Complex64 {
    cur * prev.conj() / (cur.norm() * prev.norm() + SOFT_EPS)
}

/// Nearest phase-advance quadrant for a differential symbol.
pub fn quadrant_of(d: Complex64) -> usize {
    let q = (d.arg() / FRAC_PI_2).round() as i64;
    q.rem_euclid(4) as usize
}

/// Ideal differential symbols `exp(j Δφ_k)` for a bit stream.
pub fn ideal_differentials(bits: &BitStream) -> Vec<Complex64> {
    bits.as_slice()
        .chunks(2)
        .map(|p| Complex64::from_polar(1.0, pair_to_quadrant(p[0], p[1]) as f64 * FRAC_PI_2))
        .collect()
}

/// Prepends the last `G` samples of a `K`-sample symbol.
pub fn add_cp(s: &[Complex64], cfg: &OfdmConfig) -> Result<ComplexBuffer> {
    if s.len() != cfg.symbol_len {
        return Err(CoreError::LengthMismatch {
            expected: cfg.symbol_len,
            actual: s.len(),
        });
    }
    let mut out = Vec::with_capacity(cfg.symbol_stride());
    out.extend_from_slice(&s[cfg.symbol_len - cfg.cp_len..]);
    out.extend_from_slice(s);
    Ok(ComplexBuffer::from_finite(out))
}

/// Drops the leading `G` samples of a `K+G`-sample symbol.
pub fn remove_cp(x: &[Complex64], cfg: &OfdmConfig) -> Result<ComplexBuffer> {
    if x.len() != cfg.symbol_stride() {
        return Err(CoreError::LengthMismatch {
            expected: cfg.symbol_stride(),
            actual: x.len(),
        });
    }
    Ok(ComplexBuffer::from_finite(x[cfg.cp_len..].to_vec()))
}

/// Scales every OFDM symbol to unit mean subcarrier power.
pub fn power_normalize(y: &FreqSymbols) -> Result<FreqSymbols> {
    let mut out = y.clone();
    for i in 0..out.num_symbols() {
        let sym = out.symbol_mut(i);
        let p = mean_power(sym);
        if p <= 0.0 {
            return Err(CoreError::ZeroPower);
        }
        let scale = 1.0 / p.sqrt();
        sym.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Modulate, inverse DFT and prefix every symbol, then scale the whole frame
/// to unit mean sample power.
pub fn build_frame(bits: &BitStream, cfg: &OfdmConfig) -> Result<ComplexBuffer> {
    let symbols = dqpsk_modulate(bits, cfg)?;
    let mut frame = Vec::with_capacity(cfg.frame_len());
    for sym in symbols.iter() {
        let mut s = sym.to_vec();
        dft_in_place(&mut s, true);
        frame.extend_from_slice(&add_cp(&s, cfg)?);
    }
    let p = mean_power(&frame);
    let scale = 1.0 / p.sqrt();
    frame.iter_mut().for_each(|v| *v *= scale);
    Ok(ComplexBuffer::from_finite(frame))
}

/// Strips prefixes and transforms every symbol of a boundary-aligned frame.
pub fn frame_to_freq(r: &[Complex64], cfg: &OfdmConfig) -> Result<FreqSymbols> {
    if r.len() != cfg.frame_len() {
        return Err(CoreError::LengthMismatch {
            expected: cfg.frame_len(),
            actual: r.len(),
        });
    }
    let k = cfg.symbol_len;
    let mut data = Vec::with_capacity(k * cfg.num_symbols);
    for block in r.chunks(cfg.symbol_stride()) {
        let mut body = block[cfg.cp_len..].to_vec();
        dft_in_place(&mut body, false);
        data.extend_from_slice(&body);
    }
    FreqSymbols::new(k, data)
}

/// Demodulates a boundary-aligned frame to hard bits.
pub fn demodulate_frame(r: &[Complex64], cfg: &OfdmConfig) -> Result<BitStream> {
    Ok(dqpsk_demodulate(&frame_to_freq(r, cfg)?).0)
}

/// On-air duration of `n_frames` back-to-back frames, in seconds.
pub fn frame_airtime(cfg: &OfdmConfig, n_frames: usize) -> f64 {
    (n_frames * cfg.frame_len()) as f64 / cfg.sample_rate_hz
}

/// Fraction of differing positions.
pub fn ber(tx: &BitStream, rx: &BitStream) -> Result<f64> {
    if tx.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if tx.len() != rx.len() {
        return Err(CoreError::LengthMismatch {
            expected: tx.len(),
            actual: rx.len(),
        });
    }
    Ok(bit_errors(tx, rx) as f64 / tx.len() as f64)
}

pub fn bit_errors(tx: &BitStream, rx: &BitStream) -> usize {
    tx.as_slice().iter().zip(rx.as_slice()).filter(|(a, b)| a != b).count()
}

/// Wraps a phase into `(-π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
