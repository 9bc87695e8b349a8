use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::NUM_CLASSES;
use crate::tensor::Matrix;

pub use super::tape::contrastive_loss;

/// `-(1 / (N C)) sum_n log probs[n, labels[n]]` over `C` = 5 classes.
/// Errors if a true-class probability is zero; training computes the same
/// quantity from logits and never hits that case.
pub fn seg_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || probs.cols() != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "{:?} probabilities for {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        let p = probs.get(n, y);
        if !(p > 0.0) {
            return Err(Error::NonFinite(format!("log of probability {p} at point {n}")));
        }
        sum -= p.ln();
    }
    Ok(sum / (labels.len() * NUM_CLASSES) as f64)
}

/// Loss components of one iteration. Each `seg_*` already sums the 2D and
/// 3D terms of its source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub seg_s1: f64,
    pub seg_s2: f64,
    pub ct_s1: f64,
    pub ct_s2: f64,
    pub total: f64,
}

/// `(seg_s1 + seg_s2) + lambda_ct (ct_s1 + ct_s2)`.
pub fn total_loss(seg_s1: f64, seg_s2: f64, ct_s1: f64, ct_s2: f64, lambda_ct: f64) -> f64 {
    (seg_s1 + seg_s2) + lambda_ct * (ct_s1 + ct_s2)
}

impl LossReport {
    pub fn new(seg_s1: f64, seg_s2: f64, ct_s1: f64, ct_s2: f64, lambda_ct: f64) -> Self {
        Self {
            seg_s1,
            seg_s2,
            ct_s1,
            ct_s2,
            total: total_loss(seg_s1, seg_s2, ct_s1, ct_s2, lambda_ct),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.seg_s1, self.seg_s2, self.ct_s1, self.ct_s2, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng as _;

    #[test]
    fn seg_loss_closed_forms() {
        let uniform = Matrix::from_vec(3, 5, vec![0.2; 15]);
        let l = seg_loss(&uniform, &[0, 3, 4]).unwrap();
        assert!((l - 5f64.ln() / 5.0).abs() < 1e-15);
        let mut onehot = Matrix::zeros(2, 5);
        onehot.set(0, 1, 1.0);
        onehot.set(1, 4, 1.0);
        assert_eq!(seg_loss(&onehot, &[1, 4]).unwrap(), 0.0);
        assert!(seg_loss(&onehot, &[0, 4]).is_err());
    }

    #[test]
    fn seg_loss_matches_scalar_summation() {
        let mut r = rng(3);
        let n = 40;
        let mut probs = Matrix::zeros(n, 5);
        let mut labels = Vec::new();
        for i in 0..n {
            let raw: Vec<f64> = (0..5).map(|_| r.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (c, v) in raw.iter().enumerate() {
                probs.set(i, c, v / s);
            }
            labels.push(r.random_range(0..5));
        }
        let mut oracle = 0.0;
        for i in 0..n {
            for c in 0..5 {
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                oracle += y * probs.get(i, c).ln();
            }
        }
        oracle *= -1.0 / (n as f64 * 5.0);
        assert!((seg_loss(&probs, &labels).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.01), 0.0);
        assert_eq!(total_loss(0.3, 0.4, 5.0, 7.0, 0.0), 0.3 + 0.4);
        let r = LossReport::new(0.25, 0.5, 2.0, 4.0, 0.01);
        assert!((r.total - (0.75 + 0.06)).abs() < 1e-15);
    }
}
