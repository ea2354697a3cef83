//! Labeled feature sets and per-position standardization.

use crate::error::{NnError, Result};

/// Guard applied to near-constant feature positions.
pub const STD_FLOOR: f64 = 1e-8;

/// `n` rows of `dim` features with one regression label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f32>, labels: Vec<f32>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(NnError::Shape(format!(
                "{} feature values do not form {} rows of {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..][..self.dim]
    }

    /// Rows `indices` gathered into one contiguous block.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Per-position mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    /// Fits on `data`. Also returns the positions whose deviation fell
    /// below [`STD_FLOOR`] and was clamped.
    pub fn fit(data: &Dataset) -> Result<(Self, Vec<usize>)> {
        if data.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let n = data.len() as f64;
        let mut sum = vec![0.0f64; data.dim];
        for row in data.features.chunks(data.dim) {
            sum.iter_mut().zip(row).for_each(|(s, &v)| *s += f64::from(v));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; data.dim];
        for row in data.features.chunks(data.dim) {
            sq.iter_mut().zip(row).zip(&mean).for_each(|((s, &v), m)| *s += (f64::from(v) - m).powi(2));
        }
        let mut degenerate = Vec::new();
        let std = sq
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sd = (s / n).sqrt();
                if sd < STD_FLOOR {
                    degenerate.push(i);
                    STD_FLOOR as f32
                } else {
                    sd as f32
                }
            })
            .collect();
        Ok((Self { mean: mean.iter().map(|&m| m as f32).collect(), std }, degenerate))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` for one row.
    pub fn apply_row(&self, row: &[f32], out: &mut [f32]) {
        for (((o, &x), &m), &s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = ((f64::from(x) - f64::from(m)) / f64::from(s)) as f32;
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim != self.dim() {
            return Err(NnError::Shape(format!("stats fitted for {} positions, data has {}", self.dim(), data.dim)));
        }
        let mut out = vec![0.0f32; data.features.len()];
        for (src, dst) in data.features.chunks(data.dim).zip(out.chunks_mut(data.dim)) {
            self.apply_row(src, dst);
        }
        Dataset::new(data.dim, out, data.labels.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_item_toy_set() {
        let d = Dataset::new(1, vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let (s, degenerate) = FeatureStats::fit(&d).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (1.0, 1.0));
        assert!(degenerate.is_empty());
        assert_eq!(s.apply(&d).unwrap().features, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_position_is_guarded() {
        let d = Dataset::new(2, vec![5.0, 1.0, 5.0, 3.0], vec![0.0; 2]).unwrap();
        let (s, degenerate) = FeatureStats::fit(&d).unwrap();
        assert_eq!(degenerate, vec![0]);
        assert!(s.apply(&d).unwrap().features.iter().all(|v| v.is_finite()));
        assert!(FeatureStats::fit(&Dataset::new(3, vec![], vec![]).unwrap()).is_err());
    }

    #[test]
    fn standardized_moments() {
        let n = 400;
        let features: Vec<f32> = (0..n * 3).map(|i| ((i * 7919) % 101) as f32 * 0.37 - (i % 3) as f32 * 4.0).collect();
        let d = Dataset::new(3, features, vec![0.0; n]).unwrap();
        let (s, _) = FeatureStats::fit(&d).unwrap();
        let t = s.apply(&d).unwrap();
        for pos in 0..3 {
            let col: Vec<f64> = t.features.iter().skip(pos).step_by(3).map(|&v| f64::from(v)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn apply_is_affine() {
        let d = Dataset::new(2, vec![1.0, 4.0, 3.0, 0.0, 2.0, 5.0], vec![0.0; 3]).unwrap();
        let (s, _) = FeatureStats::fit(&d).unwrap();
        let base = s.apply(&d).unwrap();
        let scaled = Dataset::new(2, d.features.iter().map(|v| 2.0 * v + 3.0).collect(), d.labels.clone()).unwrap();
        let out = s.apply(&scaled).unwrap();
        // apply(αx+β) = α apply(x) + (β + (α-1) mean) / std.
        for (i, (&o, &b)) in out.features.iter().zip(&base.features).enumerate() {
            let p = i % 2;
            let want = 2.0 * b + (3.0 + s.mean[p]) / s.std[p];
            assert!((o - want).abs() < 1e-5);
        }
    }
}
