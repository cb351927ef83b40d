use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of labeled timesteps predicted correctly. `None` when no
/// target is labeled: undefined, not zero.
pub fn accuracy(predictions: &[usize], targets: &[Option<usize>]) -> Result<Option<f64>> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let (mut correct, mut labeled) = (0usize, 0usize);
    for (p, t) in predictions.iter().zip(targets) {
        if let Some(t) = t {
            labeled += 1;
            correct += usize::from(p == t);
        }
    }
    Ok((labeled > 0).then(|| correct as f64 / labeled as f64))
}

/// Row-normalized confusion matrix in percent: `percent[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub percent: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    /// Labeled timesteps per true class; a zero marks an all-zero row.
    pub support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.support.len()
    }

    pub fn zero_support_rows(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.support[i] == 0).collect()
    }
}

pub fn confusion_matrix(predictions: &[usize], targets: &[Option<usize>], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, t) in predictions.iter().zip(targets) {
        let Some(t) = *t else { continue };
        if p >= k || t >= k {
            return Err(Error::config(format!("class index {} outside 0..{k}", p.max(t))));
        }
        counts[t][p] += 1;
    }
    let support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let percent = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            row.iter()
                .map(|&c| if s == 0 { 0.0 } else { 100.0 * c as f64 / s as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { percent, counts, support })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl std::fmt::Display for Spread {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.std, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 1], &[Some(0), Some(1), Some(1)]).unwrap(), Some(1.0));
        assert_eq!(accuracy(&[0, 1], &[Some(0), Some(0)]).unwrap(), Some(0.5));
        let mut targets = vec![None; 7];
        targets.extend([Some(1), Some(0), Some(1)]);
        let mut preds = vec![0; 7];
        preds.extend([1, 0, 0]);
        assert!((accuracy(&preds, &targets).unwrap().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0, 0], &[None, None]).unwrap(), None);
        assert!(accuracy(&[0], &[]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let t = [Some(0), Some(1), Some(2), Some(1)];
        let perfect = confusion_matrix(&[0, 1, 2, 1], &t, 3).unwrap();
        for i in 0..3 {
            assert_eq!(perfect.percent[i][i], 100.0);
        }
        let constant = confusion_matrix(&[0, 0, 0, 0], &t, 4).unwrap();
        for i in 0..3 {
            assert_eq!(constant.percent[i][0], 100.0);
        }
        assert_eq!(constant.zero_support_rows(), vec![3]);
        assert!(constant.percent[3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn population_spread() {
        let s = Spread::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(Spread::of(&[0.7; 5]).unwrap().std, 0.0);
        assert!(Spread::of(&[]).is_none());
    }
}
