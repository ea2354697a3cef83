//! Demodulation loss used to adapt the regression head without CFO labels.
//!
//! `f_D(θ̂)` compensates the frame by `exp(-j 2π θ̂ n / K)`, strips prefixes,
//! transforms each symbol and forms the soft differential symbols. The loss
//! is their mean squared distance to the ideal symbols of the transmitted
//! bits. Only the compensation depends on `θ̂`, so the derivative follows by
//! pushing `d/dθ̂` of the rotated samples through the same linear DFT and the
//! normalized product.

use std::f64::consts::PI;

use cfo_core::signal::{frame_to_freq, ideal_differentials, soft_differential};
use cfo_core::{BitStream, Complex64, CoreError, OfdmConfig};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemodLoss {
    pub loss: f64,
    pub dloss_dtheta: f64,
}

/// Rotates a boundary-aligned frame by `exp(-j 2π θ n / K)`, `n` counted
/// from the frame start.
pub fn compensate(r: &[Complex64], theta: f64, cfg: &OfdmConfig) -> Vec<Complex64> {
    let w = -2.0 * PI * theta / cfg.symbol_len as f64;
    r.iter().enumerate().map(|(n, &v)| v * Complex64::from_polar(1.0, w * n as f64)).collect()
}

/// Loss and its exact derivative with respect to `theta_hat`.
pub fn differentiable_demod_loss(r: &[Complex64], theta_hat: f64, bits: &BitStream, cfg: &OfdmConfig) -> Result<DemodLoss> {
    if bits.len() != cfg.bits_per_frame() {
        return Err(CoreError::LengthMismatch { expected: cfg.bits_per_frame(), actual: bits.len() }.into());
    }
    let comp = compensate(r, theta_hat, cfg);
    let scale = -2.0 * PI / cfg.symbol_len as f64;
    let dcomp: Vec<Complex64> = comp
        .iter()
        .enumerate()
        .map(|(n, &v)| v * Complex64::new(0.0, scale * n as f64))
        .collect();
    let y = frame_to_freq(&comp, cfg)?;
    let dy = frame_to_freq(&dcomp, cfg)?;
    let ideal = ideal_differentials(bits);

    let k = cfg.symbol_len;
    let mut loss = 0.0;
    let mut grad = 0.0;
    let mut idx = 0;
    for s in 0..cfg.num_symbols {
        let (ys, dys) = (y.symbol(s), dy.symbol(s));
        for i in 1..k {
            let (a, b, da, db) = (ys[i], ys[i - 1], dys[i], dys[i - 1]);
            let d = soft_differential(a, b);
            let (na, nb) = (a.norm(), b.norm());
            let num = a * b.conj();
            let den = na * nb + cfo_core::signal::SOFT_EPS;
            let dnum = da * b.conj() + a * db.conj();
            let dna = if na > 0.0 { (a.conj() * da).re / na } else { 0.0 };
            let dnb = if nb > 0.0 { (b.conj() * db).re / nb } else { 0.0 };
            let dden = dna * nb + na * dnb;
            let dd = dnum / den - num * (dden / (den * den));
            let e = d - ideal[idx];
            loss += e.norm_sqr();
            grad += 2.0 * (e.conj() * dd).re;
            idx += 1;
        }
    }
    let n = idx as f64;
    Ok(DemodLoss { loss: loss / n, dloss_dtheta: grad / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cfo_core::rng::stream_rng;
    use cfo_core::{apply_cfo, build_frame, Theta};

    #[test]
    fn exact_compensation_gives_zero_loss() {
        let cfg = OfdmConfig::default();
        let mut rng = stream_rng(3, 0);
        let bits = BitStream::random(cfg.bits_per_frame(), &mut rng);
        let frame = build_frame(&bits, &cfg).unwrap();
        let r = apply_cfo(&frame, Theta(0.31), &cfg, 0);
        let at_truth = differentiable_demod_loss(&r, 0.31, &bits, &cfg).unwrap();
        assert!(at_truth.loss < 1e-9, "{at_truth:?}");
        let off = differentiable_demod_loss(&r, 0.31 - 0.5, &bits, &cfg).unwrap();
        assert!(off.loss > 100.0 * at_truth.loss.max(1e-12), "{off:?}");
    }

    #[test]
    fn rejects_wrong_lengths() {
        let cfg = OfdmConfig::default();
        let bits = BitStream::random(cfg.bits_per_frame(), &mut stream_rng(1, 0));
        let short = vec![Complex64::new(1.0, 0.0); cfg.frame_len() - 1];
        assert!(differentiable_demod_loss(&short, 0.0, &bits, &cfg).is_err());
        let frame = build_frame(&bits, &cfg).unwrap();
        assert!(differentiable_demod_loss(&frame, 0.0, &bits.slice(0, 10), &cfg).is_err());
    }
}
