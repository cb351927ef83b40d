use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HingeConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            learning_rate: 0.1,
            epochs: 500,
        }
    }
}

/// One-vs-rest linear scorer: `scores = x W + b`, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearClassifier {
    pub fn scores(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    /// Highest-scoring class per row, ties toward the lowest index.
    pub fn predict(&self, x: &ArrayView2<'_, f64>) -> Vec<usize> {
        super::tasks::argmax_rows(&self.scores(x).view())
    }
}

/// Trains one hinge-loss scorer per class (full-batch subgradient descent
/// with L2 on the weights, not the bias). Rows of `x` are samples; `labels`
/// are class indices in `0..k`.
pub fn linear_baseline(x: &ArrayView2<'_, f64>, labels: &[usize], k: usize, cfg: &HingeConfig) -> Result<LinearClassifier> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::config(format!("label {bad} outside 0..{k}")));
    }
    let mut present = vec![false; k];
    for &c in labels {
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::config("linear baseline needs at least two classes in the training data"));
    }
    let (n, d) = x.dim();
    let mut weights = Array2::<f64>::zeros((d, k));
    let mut bias = Array1::<f64>::zeros(k);
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.epochs {
        let scores = x.dot(&weights) + &bias;
        // coefficient of each sample in the subgradient, per class
        let mut coef = Array2::<f64>::zeros((n, k));
        for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
            for c in 0..k {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                if y * row[c] < 1.0 {
                    coef[[i, c]] = -y * inv_n;
                }
            }
        }
        let grad_w = x.t().dot(&coef) + &(&weights * cfg.l2);
        let grad_b = coef.sum_axis(Axis(0));
        weights.scaled_add(-cfg.learning_rate, &grad_w);
        bias.scaled_add(-cfg.learning_rate, &grad_b);
    }
    Ok(LinearClassifier { weights, bias })
}
