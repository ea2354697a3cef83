//! Layer primitives as forward/backward function pairs.
//!
//! Forward functions return the output together with whatever the matching
//! backward function needs. All activations use the channel-major [`Act`]
//! layout.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Act;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, groups: usize) -> Self {
        Self { in_ch, out_ch, kernel, stride, padding, groups }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::new(in_ch, out_ch, 1, 1, 0, 1)
    }

    pub fn depthwise(ch: usize, kernel: usize, padding: usize) -> Self {
        Self::new(ch, ch, kernel, 1, padding, ch)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_ch, self.in_ch / self.groups, self.kernel]
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(NnError::Config(format!("degenerate convolution {self:?}")));
        }
        if self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(NnError::Config(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        Ok(())
    }

    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return Err(NnError::Shape(format!(
                "length {len} with padding {} is shorter than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn is_identity_im2col(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.groups == self.out_ch && !self.is_identity_im2col()
    }
}

pub struct ConvCache<T> {
    /// The layer input for pointwise and depthwise convolutions, otherwise
    /// the `(C_in·k) × (B·L_out)` patch matrix.
    cols: Vec<T>,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

fn im2col<T: Real>(x: &Act<T>, spec: &ConvSpec, out_len: usize) -> Vec<T> {
    let n = x.batch * out_len;
    let k = spec.kernel;
    let mut cols = vec![T::zero(); x.channels * k * n];
    for ci in 0..x.channels {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * n..][..n];
            for b in 0..x.batch {
                let src = &x.data[(ci * x.batch + b) * x.len..][..x.len];
                let dst = &mut row[b * out_len..][..out_len];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * spec.stride + kk) as isize - spec.padding as isize;
                    if pos >= 0 && (pos as usize) < x.len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(dcols: &[T], spec: &ConvSpec, batch: usize, in_len: usize, out_len: usize) -> Act<T> {
    let n = batch * out_len;
    let k = spec.kernel;
    let mut dx = Act::zeros(spec.in_ch, batch, in_len);
    for ci in 0..spec.in_ch {
        for kk in 0..k {
            let row = &dcols[(ci * k + kk) * n..][..n];
            for b in 0..batch {
                let src = &row[b * out_len..][..out_len];
                let dst = &mut dx.data[(ci * batch + b) * in_len..][..in_len];
                for (t, &g) in src.iter().enumerate() {
                    let pos = (t * spec.stride + kk) as isize - spec.padding as isize;
                    if pos >= 0 && (pos as usize) < in_len {
                        dst[pos as usize] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Grouped 1-D cross-correlation. `weight` has shape `[C_out, C_in/groups, k]`.
pub fn conv1d_forward<T: Real>(x: &Act<T>, weight: &[T], bias: &[T], spec: &ConvSpec) -> Result<(Act<T>, ConvCache<T>)> {
    conv1d_forward_owned(x.clone(), weight, bias, spec)
}

/// [`conv1d_forward`] taking ownership of the input so pointwise and
/// depthwise layers can cache it without a copy.
pub fn conv1d_forward_owned<T: Real>(x: Act<T>, weight: &[T], bias: &[T], spec: &ConvSpec) -> Result<(Act<T>, ConvCache<T>)> {
    spec.validate()?;
    if x.channels != spec.in_ch {
        return Err(NnError::Shape(format!("conv expects {} input channels, got {}", spec.in_ch, x.channels)));
    }
    let [_, cin_g, k] = spec.weight_shape();
    if weight.len() != spec.out_ch * cin_g * k || bias.len() != spec.out_ch {
        return Err(NnError::Shape("conv weight or bias has wrong size".into()));
    }
    let out_len = spec.out_len(x.len)?;
    let (batch, in_len) = (x.batch, x.len);
    let n = batch * out_len;
    let mut y = Act::zeros(spec.out_ch, batch, out_len);
    let cols = if spec.is_depthwise() {
        depthwise_forward(&x, weight, spec, out_len, &mut y);
        x.data
    } else {
        let cols = if spec.is_identity_im2col() { x.data } else { im2col(&x, spec, out_len) };
        let cout_g = spec.out_ch / spec.groups;
        for g in 0..spec.groups {
            let w_g = &weight[g * cout_g * cin_g * k..][..cout_g * cin_g * k];
            let cols_g = &cols[g * cin_g * k * n..][..cin_g * k * n];
            let y_g = &mut y.data[g * cout_g * n..][..cout_g * n];
            gemm(T::one(), MatRef::new(w_g, cout_g, cin_g * k), MatRef::new(cols_g, cin_g * k, n), T::zero(), y_g);
        }
        cols
    };
    for (row, &b) in y.data.chunks_mut(n).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    Ok((y, ConvCache { cols, batch, in_len, out_len }))
}

/// Valid output range `[lo, hi)` for tap `kk`: positions `t` whose source
/// index `t·s + kk - p` lies inside `[0, len)`.
fn tap_range(kk: usize, spec: &ConvSpec, len: usize, out_len: usize) -> (usize, usize) {
    let lo = spec.padding.saturating_sub(kk).div_ceil(spec.stride);
    let hi = if len + spec.padding > kk { (len + spec.padding - kk).div_ceil(spec.stride).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

fn depthwise_forward<T: Real>(x: &Act<T>, weight: &[T], spec: &ConvSpec, out_len: usize, y: &mut Act<T>) {
    let k = spec.kernel;
    for c in 0..spec.in_ch {
        let w = &weight[c * k..][..k];
        for b in 0..x.batch {
            let src = &x.data[(c * x.batch + b) * x.len..][..x.len];
            let dst = &mut y.data[(c * x.batch + b) * out_len..][..out_len];
            for (kk, &wk) in w.iter().enumerate() {
                let (lo, hi) = tap_range(kk, spec, x.len, out_len);
                for t in lo..hi {
                    dst[t] += wk * src[t * spec.stride + kk - spec.padding];
                }
            }
        }
    }
}

fn depthwise_backward<T: Real>(cache: &ConvCache<T>, weight: &[T], dy: &Act<T>, spec: &ConvSpec, dweight: &mut [T], dx: Option<&mut Act<T>>) {
    let k = spec.kernel;
    let (len, out_len, batch) = (cache.in_len, cache.out_len, cache.batch);
    let mut dx = dx;
    for c in 0..spec.in_ch {
        for b in 0..batch {
            let src = &cache.cols[(c * batch + b) * len..][..len];
            let g = &dy.data[(c * batch + b) * out_len..][..out_len];
            for kk in 0..k {
                let (lo, hi) = tap_range(kk, spec, len, out_len);
                let mut acc = T::zero();
                for t in lo..hi {
                    acc += g[t] * src[t * spec.stride + kk - spec.padding];
                }
                dweight[c * k + kk] += acc;
                if let Some(dx) = dx.as_deref_mut() {
                    let wk = weight[c * k + kk];
                    let out = &mut dx.data[(c * batch + b) * len..][..len];
                    for t in lo..hi {
                        out[t * spec.stride + kk - spec.padding] += wk * g[t];
                    }
                }
            }
        }
    }
}

pub struct ConvGrads<T> {
    pub dx: Option<Act<T>>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv1d_backward<T: Real>(
    cache: &ConvCache<T>,
    weight: &[T],
    dy: &Act<T>,
    spec: &ConvSpec,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    if dy.channels != spec.out_ch || dy.batch != cache.batch || dy.len != cache.out_len {
        return Err(NnError::Shape("conv output gradient has wrong shape".into()));
    }
    let [_, cin_g, k] = spec.weight_shape();
    let n = cache.batch * cache.out_len;
    let cout_g = spec.out_ch / spec.groups;
    let dbias = dy.data.chunks(n).map(|row| sum_f64(row)).map(T::lit).collect();
    let mut dweight = vec![T::zero(); weight.len()];
    if spec.is_depthwise() {
        let mut dx = need_dx.then(|| Act::zeros(spec.in_ch, cache.batch, cache.in_len));
        depthwise_backward(cache, weight, dy, spec, &mut dweight, dx.as_mut());
        return Ok(ConvGrads { dx, dweight, dbias });
    }
    let mut dcols = if need_dx { vec![T::zero(); cache.cols.len()] } else { Vec::new() };
    for g in 0..spec.groups {
        let dy_g = MatRef::new(&dy.data[g * cout_g * n..][..cout_g * n], cout_g, n);
        let cols_g = MatRef::new(&cache.cols[g * cin_g * k * n..][..cin_g * k * n], cin_g * k, n);
        gemm(T::one(), dy_g, cols_g.t(), T::zero(), &mut dweight[g * cout_g * cin_g * k..][..cout_g * cin_g * k]);
        if need_dx {
            let w_g = MatRef::new(&weight[g * cout_g * cin_g * k..][..cout_g * cin_g * k], cout_g, cin_g * k);
            gemm(T::one(), w_g.t(), dy_g, T::zero(), &mut dcols[g * cin_g * k * n..][..cin_g * k * n]);
        }
    }
    let dx = need_dx.then(|| {
        if spec.is_identity_im2col() {
            Act { channels: spec.in_ch, batch: cache.batch, len: cache.in_len, data: dcols }
        } else {
            col2im(&dcols, spec, cache.batch, cache.in_len, cache.out_len)
        }
    });
    Ok(ConvGrads { dx, dweight, dbias })
}

/// Sum in `f64` with eight independent accumulators (vectorizable).
fn sum_f64<T: Real>(xs: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|v| v.as_f64()).sum();
    for c in chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v.as_f64();
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn dot_f64<T: Real>(xs: &[T], ys: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (cx, cy) = (xs.chunks_exact(8), ys.chunks_exact(8));
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    for (a8, b8) in cx.zip(cy) {
        for ((acc, a), b) in acc.iter_mut().zip(a8).zip(b8) {
            *acc += a.as_f64() * b.as_f64();
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization over batch × length.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates (unbiased variance, momentum 0.1); evaluation mode uses the
/// running estimates.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    x: &Act<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: Mode,
) -> Result<(Act<T>, BnCache<T>)> {
    let c = x.channels;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(NnError::Shape("batch norm parameter size differs from channel count".into()));
    }
    let n = x.cols();
    if mode == Mode::Train && x.batch < 2 {
        return Err(NnError::BatchTooSmall);
    }
    let mut y = Act::zeros(c, x.batch, x.len);
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let row = &x.data[ch * n..][..n];
        let (mean, istd) = match mode {
            Mode::Train => {
                let mean = sum_f64(row) / n as f64;
                // Two-pass variance: E[(x - mean)²] stays accurate for large means.
                let mut acc = [0.0f64; 8];
                let chunks = row.chunks_exact(8);
                let mut var: f64 = chunks.remainder().iter().map(|v| (v.as_f64() - mean).powi(2)).sum();
                for c in chunks {
                    for (a, v) in acc.iter_mut().zip(c) {
                        let d = v.as_f64() - mean;
                        *a += d * d;
                    }
                }
                var = (var + acc.iter().sum::<f64>()) / n as f64;
                let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
                running_mean[ch] = T::lit((1.0 - BN_MOMENTUM) * running_mean[ch].as_f64() + BN_MOMENTUM * mean);
                running_var[ch] = T::lit((1.0 - BN_MOMENTUM) * running_var[ch].as_f64() + BN_MOMENTUM * unbiased);
                (T::lit(mean), T::lit(1.0 / (var + BN_EPS).sqrt()))
            }
            Mode::Eval => (
                running_mean[ch],
                T::lit(1.0 / (running_var[ch].as_f64() + BN_EPS).sqrt()),
            ),
        };
        inv_std[ch] = istd;
        let (g, b) = (gamma[ch], beta[ch]);
        let xh = &mut xhat[ch * n..][..n];
        let out = &mut y.data[ch * n..][..n];
        for ((h, o), &v) in xh.iter_mut().zip(out.iter_mut()).zip(row) {
            *h = (v - mean) * istd;
            *o = g * *h + b;
        }
    }
    Ok((y, BnCache { xhat, inv_std, mode }))
}

pub struct BnGrads<T> {
    pub dx: Act<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], dy: &Act<T>) -> Result<BnGrads<T>> {
    let c = dy.channels;
    let n = dy.cols();
    if cache.xhat.len() != dy.data.len() || gamma.len() != c {
        return Err(NnError::Shape("batch norm gradient has wrong shape".into()));
    }
    let mut dx = Act::zeros(c, dy.batch, dy.len);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let g = &dy.data[ch * n..][..n];
        let xh = &cache.xhat[ch * n..][..n];
        let sum_dy = sum_f64(g);
        let sum_dy_xh = dot_f64(g, xh);
        dgamma[ch] = T::lit(sum_dy_xh);
        dbeta[ch] = T::lit(sum_dy);
        let scale = gamma[ch] * cache.inv_std[ch];
        let out = &mut dx.data[ch * n..][..n];
        match cache.mode {
            Mode::Train => {
                let mean_dy = T::lit(sum_dy / n as f64);
                let mean_dy_xh = T::lit(sum_dy_xh / n as f64);
                for ((o, &d), &h) in out.iter_mut().zip(g).zip(xh) {
                    *o = scale * (d - mean_dy - h * mean_dy_xh);
                }
            }
            Mode::Eval => {
                for (o, &d) in out.iter_mut().zip(g) {
                    *o = scale * d;
                }
            }
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Gelu,
    Silu,
}

pub struct ActCache<T> {
    /// Pointwise derivative at the forward input.
    deriv: Vec<T>,
}

#[inline(always)]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp_())
}

#[inline(always)]
fn normal_cdf<T: Real>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Returns the activation and its derivative at `x`.
#[inline(always)]
fn activate_with_deriv<T: Real>(kind: Activation, x: T) -> (T, T) {
    match kind {
        Activation::Gelu => gelu_with_deriv(x),
        Activation::Silu => silu_with_deriv(x),
    }
}

#[inline(always)]
fn gelu_with_deriv<T: Real>(x: T) -> (T, T) {
    let cdf = normal_cdf(x);
    let pdf = T::lit(0.398_942_280_401_432_7) * (T::lit(-0.5) * x * x).exp_();
    (x * cdf, cdf + x * pdf)
}

#[inline(always)]
fn silu_with_deriv<T: Real>(x: T) -> (T, T) {
    let s = sigmoid(x);
    (x * s, s + x * s * (T::one() - s))
}

fn map_with_deriv<T: Real>(x: &[T], f: impl Fn(T) -> (T, T)) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut deriv = vec![T::zero(); x.len()];
    // Fixed-width chunks let the compiler vectorize the polynomial kernels.
    for ((yc, dc), xc) in y.chunks_mut(8).zip(deriv.chunks_mut(8)).zip(x.chunks(8)) {
        for i in 0..xc.len() {
            (yc[i], dc[i]) = f(xc[i]);
        }
    }
    (y, deriv)
}

pub fn activation_forward<T: Real>(kind: Activation, x: &[T]) -> (Vec<T>, ActCache<T>) {
    let (y, deriv) = match kind {
        Activation::Gelu => map_with_deriv(x, gelu_with_deriv),
        Activation::Silu => map_with_deriv(x, silu_with_deriv),
    };
    (y, ActCache { deriv })
}

pub fn activation_backward<T: Real>(cache: &ActCache<T>, dy: &[T]) -> Vec<T> {
    assert_eq!(dy.len(), cache.deriv.len());
    dy.iter().zip(&cache.deriv).map(|(&g, &d)| g * d).collect()
}

/// Scalar activation value, used by tests and by callers outside a batch.
pub fn activate<T: Real>(kind: Activation, x: T) -> T {
    activate_with_deriv(kind, x).0
}

/// Mean over the time axis: `C × B × L → C × B × 1`.
pub fn avg_pool_forward<T: Real>(x: &Act<T>) -> Result<Act<T>> {
    if x.len == 0 {
        return Err(NnError::Shape("pooling over an empty time axis".into()));
    }
    let inv = T::lit(1.0 / x.len as f64);
    let data = x.data.chunks(x.len).map(|row| row.iter().copied().sum::<T>() * inv).collect();
    Act::new(x.channels, x.batch, 1, data)
}

pub fn avg_pool_backward<T: Real>(dy: &Act<T>, len: usize) -> Act<T> {
    let inv = T::lit(1.0 / len as f64);
    let data = dy.data.iter().flat_map(|&g| std::iter::repeat_n(g * inv, len)).collect();
    Act { channels: dy.channels, batch: dy.batch, len, data }
}

/// `Y = W X + b` with `X` as `in × B` and `W` as `out × in`.
pub fn linear_forward<T: Real>(x: &Act<T>, weight: &[T], bias: &[T], out_features: usize) -> Result<Act<T>> {
    let in_features = x.channels;
    if x.len != 1 || weight.len() != out_features * in_features || bias.len() != out_features {
        return Err(NnError::Shape(format!(
            "linear {in_features}->{out_features} got weight {} bias {} len {}",
            weight.len(),
            bias.len(),
            x.len
        )));
    }
    let mut y = Act::zeros(out_features, x.batch, 1);
    gemm(
        T::one(),
        MatRef::new(weight, out_features, in_features),
        MatRef::new(&x.data, in_features, x.batch),
        T::zero(),
        &mut y.data,
    );
    for (row, &b) in y.data.chunks_mut(x.batch).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    Ok(y)
}

pub struct LinearGrads<T> {
    pub dx: Act<T>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn linear_backward<T: Real>(x: &Act<T>, weight: &[T], dy: &Act<T>) -> Result<LinearGrads<T>> {
    let (inf, outf, b) = (x.channels, dy.channels, x.batch);
    if dy.batch != b || weight.len() != inf * outf {
        return Err(NnError::Shape("linear gradient has wrong shape".into()));
    }
    let mut dweight = vec![T::zero(); weight.len()];
    gemm(T::one(), MatRef::new(&dy.data, outf, b), MatRef::new(&x.data, inf, b).t(), T::zero(), &mut dweight);
    let dbias = dy.data.chunks(b).map(|r| r.iter().copied().sum()).collect();
    let mut dx = Act::zeros(inf, b, 1);
    gemm(T::one(), MatRef::new(weight, outf, inf).t(), MatRef::new(&dy.data, outf, b), T::zero(), &mut dx.data);
    Ok(LinearGrads { dx, dweight, dbias })
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`None` in evaluation mode or when `p == 0`).
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(x: &[T], p: f64, mode: Mode, rng: &mut R) -> Result<(Vec<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.to_vec(), None));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = x
        .iter()
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, dy: &[T]) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&d, &k)| d * k).collect(),
        None => dy.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(x: &Act<f64>, w: &[f64], bias: &[f64], s: &ConvSpec) -> Act<f64> {
        let lout = s.out_len(x.len).unwrap();
        let cin_g = s.in_ch / s.groups;
        let cout_g = s.out_ch / s.groups;
        let mut y = Act::zeros(s.out_ch, x.batch, lout);
        for b in 0..x.batch {
            for o in 0..s.out_ch {
                let g = o / cout_g;
                for t in 0..lout {
                    let mut acc = bias[o];
                    for ci in 0..cin_g {
                        for kk in 0..s.kernel {
                            let pos = (t * s.stride + kk) as isize - s.padding as isize;
                            if pos >= 0 && (pos as usize) < x.len {
                                acc += w[(o * cin_g + ci) * s.kernel + kk] * x.at(g * cin_g + ci, b, pos as usize);
                            }
                        }
                    }
                    y.data[(o * x.batch + b) * lout + t] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Act::new(1, 1, 6, vec![1.0, -2.0, 3.0, 0.5, 7.0, -1.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 5, 1, 2, 1);
        let (y, _) = conv1d_forward(&x, &[0.0, 0.0, 1.0, 0.0, 0.0], &[0.0], &spec).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = [
            ConvSpec::new(2, 3, 3, 1, 1, 1),
            ConvSpec::new(2, 3, 5, 2, 2, 1),
            ConvSpec::new(4, 4, 3, 1, 1, 4),
            ConvSpec::new(4, 6, 3, 2, 0, 2),
            ConvSpec::new(3, 3, 5, 2, 3, 3),
            ConvSpec::pointwise(3, 5),
        ];
        for spec in specs {
            let x = Act::new(spec.in_ch, 2, 11, randn(spec.in_ch * 2 * 11, &mut rng)).unwrap();
            let w = randn(spec.weight_shape().iter().product(), &mut rng);
            let b = randn(spec.out_ch, &mut rng);
            let (y, _) = conv1d_forward(&x, &w, &b, &spec).unwrap();
            let want = conv_oracle(&x, &w, &b, &spec);
            assert!(y.same_shape(&want));
            let err = y.data.iter().zip(&want.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{spec:?}: {err}");
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Act::<f64>::zeros(3, 1, 4);
        assert!(conv1d_forward(&x, &[0.0; 6], &[0.0; 2], &ConvSpec::pointwise(2, 2)).is_err());
        assert!(ConvSpec::new(3, 4, 3, 1, 1, 2).validate().is_err());
        assert!(ConvSpec::new(1, 1, 7, 1, 0, 1).out_len(5).is_err());
        assert_eq!(ConvSpec::new(64, 128, 5, 2, 2, 1).out_len(320).unwrap(), 160);
    }

    /// Checks every gradient of a conv against central differences of
    /// `sum(y ⊙ r)` for a fixed random projection `r`.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in [ConvSpec::new(2, 3, 5, 2, 2, 1), ConvSpec::depthwise(3, 3, 1), ConvSpec::new(2, 2, 4, 2, 3, 2), ConvSpec::new(4, 6, 3, 1, 0, 2)] {
            let x = Act::new(spec.in_ch, 2, 9, randn(spec.in_ch * 18, &mut rng)).unwrap();
            let w = randn(spec.weight_shape().iter().product(), &mut rng);
            let b = randn(spec.out_ch, &mut rng);
            let (y, cache) = conv1d_forward(&x, &w, &b, &spec).unwrap();
            let r = randn(y.data.len(), &mut rng);
            let dy = Act::new(y.channels, y.batch, y.len, r.clone()).unwrap();
            let grads = conv1d_backward(&cache, &w, &dy, &spec, true).unwrap();
            let proj = |x: &Act<f64>, w: &[f64], b: &[f64]| -> f64 {
                let (y, _) = conv1d_forward(x, w, b, &spec).unwrap();
                y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let nx = numeric_grad(&x.data, |v| proj(&Act::new(x.channels, x.batch, x.len, v.to_vec()).unwrap(), &w, &b));
            let nw = numeric_grad(&w, |v| proj(&x, v, &b));
            let nb = numeric_grad(&b, |v| proj(&x, &w, v));
            assert!(max_rel_error(&grads.dx.unwrap().data, &nx) < 1e-4);
            assert!(max_rel_error(&grads.dweight, &nw) < 1e-4);
            assert!(max_rel_error(&grads.dbias, &nb) < 1e-4);
        }
    }

    #[test]
    fn batchnorm_constant_input_and_moments() {
        let c = 3;
        let x = Act::new(c, 4, 5, vec![2.5; c * 20]).unwrap();
        let (mut rm, mut rv) = (vec![0.0f64; c], vec![1.0f64; c]);
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, Mode::Train).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        assert!((rm[0] - 0.25).abs() < 1e-12 && (rv[0] - 0.9).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = randn(c * 40, &mut rng).iter().map(|v| 3.0 * v + 1.0).collect();
        let x = Act::new(c, 8, 5, data).unwrap();
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, Mode::Train).unwrap();
        for row in y.data.chunks(40) {
            let mean = row.iter().sum::<f64>() / 40.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-6);
            // Exact unit variance up to the ε inside the square root.
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
        let one = Act::new(c, 1, 5, vec![0.0; 15]).unwrap();
        assert!(matches!(
            batchnorm_forward(&one, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, Mode::Train),
            Err(NnError::BatchTooSmall)
        ));
        assert!(batchnorm_forward(&one, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = 3;
        let x = Act::new(c, 3, 4, randn(c * 12, &mut rng)).unwrap();
        let gamma = randn(c, &mut rng);
        let beta = randn(c, &mut rng);
        let r = randn(x.data.len(), &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let (rm0, rv0) = (vec![0.1; c], vec![0.7; c]);
            let proj = |x: &Act<f64>, g: &[f64], b: &[f64]| -> f64 {
                let (mut rm, mut rv) = (rm0.clone(), rv0.clone());
                let (y, _) = batchnorm_forward(x, g, b, &mut rm, &mut rv, mode).unwrap();
                y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let (mut rm, mut rv) = (rm0.clone(), rv0.clone());
            let (_, cache) = batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, mode).unwrap();
            let dy = Act::new(c, 3, 4, r.clone()).unwrap();
            let grads = batchnorm_backward(&cache, &gamma, &dy).unwrap();
            let nx = numeric_grad(&x.data, |v| proj(&Act::new(c, 3, 4, v.to_vec()).unwrap(), &gamma, &beta));
            let ng = numeric_grad(&gamma, |v| proj(&x, v, &beta));
            let nb = numeric_grad(&beta, |v| proj(&x, &gamma, v));
            assert!(max_rel_error(&grads.dx.data, &nx) < 1e-4, "{mode:?}");
            assert!(max_rel_error(&grads.dgamma, &ng) < 1e-4);
            assert!(max_rel_error(&grads.dbeta, &nb) < 1e-4);
        }
    }

    #[test]
    fn activation_values() {
        for kind in [Activation::Gelu, Activation::Silu] {
            assert_eq!(activate(kind, 0.0f64), 0.0);
        }
        assert!((activate(Activation::Gelu, 10.0f64) - 10.0).abs() < 1e-4);
        // SiLU approaches x only like x e^{-x}: 4.5e-4 short at 10.
        let gap = 10.0 - activate(Activation::Silu, 10.0f64);
        assert!((gap - 10.0 * (-10.0f64).exp()).abs() < 1e-7, "{gap}");
        assert!((activate(Activation::Silu, 20.0f64) - 20.0).abs() < 1e-4);
        assert!((activate(Activation::Gelu, 1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(-6.0..6.0)).collect();
        for kind in [Activation::Gelu, Activation::Silu] {
            let (_, cache) = activation_forward(kind, &x);
            let d = activation_backward(&cache, &vec![1.0; 100]);
            for (i, &xi) in x.iter().enumerate() {
                let h = 1e-5;
                let fd = (activate(kind, xi + h) - activate(kind, xi - h)) / (2.0 * h);
                assert!((d[i] - fd).abs() < 1e-6, "{kind:?} at {xi}: {} vs {fd}", d[i]);
            }
        }
    }

    #[test]
    fn pooling_by_hand_and_gradient() {
        let x = Act::new(2, 1, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(avg_pool_forward(&x).unwrap().data, vec![2.0, 3.0]);
        let single = Act::new(3, 2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(avg_pool_forward(&single).unwrap(), single);
        assert!(avg_pool_forward(&Act::<f64>::zeros(2, 1, 0)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Act::new(2, 3, 5, randn(30, &mut rng)).unwrap();
        let r = randn(6, &mut rng);
        let dx = avg_pool_backward(&Act::new(2, 3, 1, r.clone()).unwrap(), 5);
        let nx = numeric_grad(&x.data, |v| {
            let y = avg_pool_forward(&Act::new(2, 3, 5, v.to_vec()).unwrap()).unwrap();
            y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_error(&dx.data, &nx) < 1e-6);
    }

    #[test]
    fn linear_identity_and_gradients() {
        let x = Act::new(3, 2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(linear_forward(&x, &eye, &[0.0; 3], 3).unwrap(), x);
        assert!(linear_forward(&x, &eye, &[0.0; 2], 3).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = randn(8, &mut rng);
        let b = randn(4, &mut rng);
        let x = Act::new(2, 3, 1, randn(6, &mut rng)).unwrap();
        let r = randn(12, &mut rng);
        let g = linear_backward(&x, &w, &Act::new(4, 3, 1, r.clone()).unwrap()).unwrap();
        let proj = |x: &Act<f64>, w: &[f64], b: &[f64]| -> f64 {
            linear_forward(x, w, b, 4).unwrap().data.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_error(&g.dx.data, &numeric_grad(&x.data, |v| proj(&Act::new(2, 3, 1, v.to_vec()).unwrap(), &w, &b))) < 1e-4);
        assert!(max_rel_error(&g.dweight, &numeric_grad(&w, |v| proj(&x, v, &b))) < 1e-4);
        assert!(max_rel_error(&g.dbias, &numeric_grad(&b, |v| proj(&x, &w, v))) < 1e-4);
    }

    #[test]
    fn dropout_identity_cases_and_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = vec![1.5f64; 8];
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.3, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
        let big = vec![2.0f64; 100_000];
        let (y, mask) = dropout_forward(&big, 0.3, Mode::Train, &mut rng).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean / 2.0 - 1.0).abs() < 0.01, "{mean}");
        let back = dropout_backward(mask.as_deref(), &vec![1.0; big.len()]);
        assert!(back.iter().zip(&y).all(|(g, v)| (*g == 0.0) == (*v == 0.0)));
    }
}
