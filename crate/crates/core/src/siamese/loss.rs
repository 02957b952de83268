use serde::{Deserialize, Serialize};

use super::model::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance between two embeddings.
pub fn pair_distance(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    if e1.values.len() != e2.values.len() {
        return Err(Error::Dimension {
            expected: e1.values.len(),
            actual: e2.values.len(),
        });
    }
    Ok(e1
        .values
        .iter()
        .zip(&e2.values)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// `Y/2 D^2 + (1-Y)/2 max(0, m - D)^2`.
pub fn contrastive_loss(label: u8, distance: f64, cfg: &LossConfig) -> f64 {
    if label == 1 {
        0.5 * distance * distance
    } else {
        let gap = (cfg.margin - distance).max(0.0);
        0.5 * gap * gap
    }
}

/// Loss of a pair of embeddings and its gradient with respect to the first
/// one; the gradient for the second is the negation.
///
/// For dissimilar pairs the gradient is taken as zero at `D >= m` (including
/// the hinge point) and at `D == 0`, where the distance is not differentiable.
pub fn contrastive_grad(e1: &[f64], e2: &[f64], label: u8, cfg: &LossConfig) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let loss = contrastive_loss(label, d, cfg);
    let grad = if label == 1 {
        diff
    } else if d >= cfg.margin || d == 0.0 {
        vec![0.0; diff.len()]
    } else {
        let k = -(cfg.margin - d) / d;
        diff.into_iter().map(|v| k * v).collect()
    };
    (loss, grad)
}
