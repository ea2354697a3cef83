//! Loss, AdamW, global-norm clipping and plateau learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::{CfoNet, Param, ParamKind};
use crate::real::Real;

/// `mean((pred - target)²) + λ Σ‖W‖²` over weight tensors only.
/// Returns the loss and `d loss / d pred`; the L2 term's gradient is added
/// by [`add_l2_grad`].
pub fn loss_mse_l2<T: Real>(pred: &[T], target: &[T], net: &CfoNet<T>, lambda: f64) -> Result<(f64, Vec<T>)> {
    let (mse, dpred) = mse(pred, target)?;
    Ok((mse + lambda * net.weight_sq_norm(), dpred))
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2)).sum::<f64>() / n;
    let dpred = pred.iter().zip(target).map(|(&p, &t)| T::lit(2.0 / n) * (p - t)).collect();
    Ok((loss, dpred))
}

/// Adds `2 λ W` to the gradient of every weight tensor in `params`.
pub fn add_l2_grad<T: Real>(params: &mut [&mut Param<T>], lambda: f64) {
    let two_lambda = T::lit(2.0 * lambda);
    for p in params.iter_mut().filter(|p| p.kind == ParamKind::Weight) {
        let data = p.tensor.data.clone();
        let g = p.tensor.grad_mut();
        g.iter_mut().zip(&data).for_each(|(g, &w)| *g += two_lambda * w);
    }
}

pub fn grad_norm<T: Real>(params: &[&mut Param<T>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.tensor.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let scale = T::lit(max_norm / norm);
        for p in params.iter_mut() {
            if let Some(g) = p.tensor.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// AdamW with bias correction. Moment buffers are kept in `f32` like the
/// parameters they track and follow the order of the parameter list given
/// to [`AdamW::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(lr: f64, cfg: AdamWConfig) -> Self {
        Self { cfg, lr, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.tensor.len()) {
            return Err(NnError::Shape("optimizer state does not match parameter list".into()));
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = self.lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        let decay = 1.0 - self.lr * weight_decay;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.tensor.grad.as_ref() else { continue };
            let grad: Vec<f64> = grad.iter().map(|g| g.as_f64()).collect();
            for (((w, &g), m), v) in p.tensor.data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let mf = beta1 * f64::from(*m) + (1.0 - beta1) * g;
                let vf = beta2 * f64::from(*v) + (1.0 - beta2) * g * g;
                *m = mf as f32;
                *v = vf as f32;
                let denom = vf.sqrt() / bc2_sqrt + eps;
                *w = T::lit(w.as_f64() * decay - step_size * mf / denom);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve (relative threshold 1e-4) for more than `patience`
/// consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, threshold: 1e-4, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Feeds one validation loss; returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamGroup;
    use crate::tensor::Tensor;

    fn scalar(v: f64) -> Param<f64> {
        Param {
            name: "w".into(),
            kind: ParamKind::Weight,
            group: ParamGroup::Fc,
            tensor: Tensor::new(&[1], vec![v]).unwrap(),
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 2.0]).unwrap().0, 1.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        p.tensor.grad_mut();
        let mut opt = AdamW::new(1e-3, AdamWConfig::default());
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.tensor.data[0], 0.7);
    }

    #[test]
    fn clip_norm_two_halves() {
        let mut a = scalar(0.0);
        let mut b = scalar(0.0);
        a.tensor.grad = Some(vec![1.2]);
        b.tensor.grad = Some(vec![1.6]);
        let before = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((before - 2.0).abs() < 1e-15);
        assert_eq!(a.tensor.grad.as_ref().unwrap()[0], 1.2 * 0.5);
        assert_eq!(b.tensor.grad.as_ref().unwrap()[0], 1.6 * 0.5);
    }

    /// Minimizes (w - 3)² from w = 0 and compares the first step with the
    /// closed-form bias-corrected update, which moves exactly `lr` against
    /// the gradient sign.
    #[test]
    fn quadratic_converges() {
        let mut p = scalar(0.0);
        let mut opt = AdamW::new(0.05, AdamWConfig::default());
        for i in 0..500 {
            let w = p.tensor.data[0];
            p.tensor.grad = Some(vec![2.0 * (w - 3.0)]);
            opt.step(&mut [&mut p]).unwrap();
            if i == 0 {
                assert!((p.tensor.data[0] - 0.05).abs() < 1e-6);
            }
        }
        assert!((p.tensor.data[0] - 3.0).powi(2) < 1e-6, "{}", p.tensor.data[0]);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = scalar(1.0);
        p.tensor.grad = Some(vec![0.0]);
        let mut opt = AdamW::new(0.1, AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() });
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.tensor.data[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauScheduler::new(0.5, 5);
        let mut lr = 1e-3;
        lr = s.step(1.0, lr);
        for _ in 0..5 {
            lr = s.step(1.0, lr);
            assert_eq!(lr, 1e-3);
        }
        lr = s.step(1.0, lr);
        assert_eq!(lr, 5e-4);
        lr = s.step(0.5, lr);
        assert_eq!((lr, s.bad_epochs), (5e-4, 0));
    }
}
