use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments per parameter name.
    pub moments: BTreeMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter in `store`. Every parameter
    /// must have a gradient of its own shape.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Option<ArrayD<f64>>>) -> Result<()> {
        for (name, value) in store.iter() {
            match grads.get(name) {
                Some(Some(gr)) if gr.shape() == value.shape() => {}
                Some(Some(gr)) => {
                    return Err(Error::Shape(format!(
                        "gradient of `{name}` has shape {:?}, parameter has {:?}",
                        gr.shape(),
                        value.shape()
                    )))
                }
                _ => return Err(Error::MissingGradient(name.to_string())),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (name, value) in store.iter_mut() {
            let grad = grads[name].as_ref().unwrap();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (ArrayD::zeros(value.raw_dim()), ArrayD::zeros(value.raw_dim())));
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &gr| {
                    *m = b1 * *m + (1.0 - b1) * gr;
                    *v = b2 * *v + (1.0 - b2) * gr * gr;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without an improvement larger than `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
}

pub const PLATEAU_THRESHOLD: f64 = 1e-12;

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            threshold: PLATEAU_THRESHOLD,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    /// Records one epoch's loss and returns the learning rate to use next.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.patience {
                self.lr *= self.factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.lr
    }
}

/// Teacher-forcing probability: `max(0, 1 - epoch / decay_epochs)`.
pub fn sampling_prob(epoch: usize, decay_epochs: usize) -> f64 {
    if decay_epochs == 0 {
        return 0.0;
    }
    (1.0 - epoch as f64 / decay_epochs as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::array;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", array(&[2], vec![1.0, -2.0]));
        s.insert("b", array(&[1, 2], vec![0.5, 0.25]));
        s
    }

    fn grads(a: Vec<f64>, b: Vec<f64>) -> BTreeMap<String, Option<ArrayD<f64>>> {
        BTreeMap::from([
            ("a".to_string(), Some(array(&[2], a))),
            ("b".to_string(), Some(array(&[1, 2], b))),
        ])
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(1e-3);
        for _ in 0..5 {
            adam.step(&mut s, &grads(vec![0.0; 2], vec![0.0; 2])).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut s, &grads(vec![3.0, -1e-4], vec![1e6, 0.2])).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                let d = (x - y).abs();
                assert!(d <= 1e-3 * (1.0 + 1e-6) && d > 0.9e-3, "{d}");
            }
        }
    }

    #[test]
    fn missing_gradient_named() {
        let mut s = store();
        let mut g = grads(vec![0.0; 2], vec![0.0; 2]);
        g.insert("b".into(), None);
        let err = Adam::new(1e-3).step(&mut s, &g).unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");
    }

    #[test]
    fn plateau_decay() {
        let mut p = PlateauScheduler::new(1e-3, 0.25, 50);
        p.step(1.0);
        for _ in 0..49 {
            assert_eq!(p.step(1.0), 1e-3);
        }
        assert_eq!(p.step(1.0), 2.5e-4);
        for _ in 0..50 {
            p.step(1.0);
        }
        assert_eq!(p.lr, 6.25e-5);
    }

    #[test]
    fn plateau_improvement_resets() {
        let mut p = PlateauScheduler::new(1e-3, 0.25, 50);
        p.step(1.0);
        for _ in 0..48 {
            p.step(1.0);
        }
        p.step(0.5);
        assert_eq!(p.epochs_since_improvement, 0);
        for _ in 0..49 {
            p.step(0.5);
        }
        assert_eq!(p.lr, 1e-3);
    }

    #[test]
    fn sampling_schedule() {
        assert_eq!(sampling_prob(0, 300), 1.0);
        assert_eq!(sampling_prob(150, 300), 0.5);
        assert_eq!(sampling_prob(300, 300), 0.0);
        assert_eq!(sampling_prob(1000, 300), 0.0);
    }
}
