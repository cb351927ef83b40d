//! Metrics and analyses: accuracy, confusion matrices, rollout error,
//! PCA projections and plot-data export.

mod export;
mod metrics;
mod pca;
mod rollout;

pub use export::{accuracy_table, confusion_table, mse_table, pca_table, per_step_table};
pub use metrics::{accuracy, confusion_matrix, ConfusionMatrix, Spread};
pub use pca::{pca_project, spectrum, PcaProjection, Spectrum, RANK_TOLERANCE};
pub use rollout::{per_step_mse, rollout_mse, rollout_starts, PerStepMse};

use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{Ctx, Mode};
use crate::autodiff::Graph;
use crate::data::{LabelScheme, Window};
use crate::error::Result;
use crate::models::{argmax_rows, classify_windows, window_targets, ModelState};
use crate::training::ExperimentTask;

/// Windows classified together in one evaluation graph.
const CLASSIFY_CHUNK: usize = 256;

/// Predicted classes and masked targets for every timestep of `windows`,
/// in evaluation mode.
pub fn predict_windows(
    model: &ModelState,
    windows: &[&Window],
    scheme: LabelScheme,
) -> Result<(Vec<usize>, Vec<Option<usize>>)> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for chunk in windows.chunks(CLASSIFY_CHUNK) {
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let mut ctx = Ctx::new(&model.params, Mode::Eval);
        let logits = classify_windows(&mut g, &p, &mut ctx, model, chunk)?;
        let v = g.value(logits).view().into_dimensionality().unwrap();
        preds.extend(argmax_rows(&v));
        targets.extend(window_targets(chunk, scheme));
    }
    Ok((preds, targets))
}

/// Accuracy of `model` on `windows`; `None` if nothing is labeled.
pub fn window_accuracy(model: &ModelState, windows: &[&Window], scheme: LabelScheme) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let (p, t) = predict_windows(model, windows, scheme)?;
    accuracy(&p, &t)
}

/// Outcome of one (permutation, fold) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub permutation: usize,
    pub fold: usize,
    pub train_worms: Vec<String>,
    pub task: ExperimentTask,
    pub seed: u64,
    pub accuracy_train: Option<f64>,
    pub accuracy_val: Option<f64>,
    pub accuracy_test: Option<f64>,
    pub accuracy_generalization: Option<f64>,
    /// Test-fold confusion matrix (classification).
    pub confusion: Option<ConfusionMatrix>,
    /// Validation-fold rollout error per step (prediction).
    pub per_step_mse: Option<Vec<f64>>,
    /// Extended-evaluation rollout error per step (prediction).
    pub generalization_mse: Option<Vec<f64>>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    pub runtime_s: f64,
}

impl RunMetrics {
    /// Copy with wall-time fields cleared, for reproducibility comparisons.
    pub fn without_wall_time(&self) -> Self {
        Self {
            runtime_s: 0.0,
            ..self.clone()
        }
    }
}

/// Mean ± population standard deviation of every metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub accuracy_train: Option<Spread>,
    pub accuracy_val: Option<Spread>,
    pub accuracy_test: Option<Spread>,
    pub accuracy_generalization: Option<Spread>,
    pub per_step_mse: Vec<Spread>,
    pub generalization_mse: Vec<Spread>,
}

fn spread_of(runs: &[RunMetrics], f: impl Fn(&RunMetrics) -> Option<f64>) -> Option<Spread> {
    let values: Vec<f64> = runs.iter().filter_map(f).collect();
    Spread::of(&values)
}

fn step_spreads(runs: &[RunMetrics], f: impl Fn(&RunMetrics) -> Option<&Vec<f64>>) -> Vec<Spread> {
    let curves: Vec<&Vec<f64>> = runs.iter().filter_map(f).collect();
    let steps = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..steps)
        .filter_map(|s| Spread::of(&curves.iter().map(|c| c[s]).collect::<Vec<_>>()))
        .collect()
}

pub fn summarize(runs: &[RunMetrics]) -> MetricsSummary {
    MetricsSummary {
        runs: runs.len(),
        accuracy_train: spread_of(runs, |r| r.accuracy_train),
        accuracy_val: spread_of(runs, |r| r.accuracy_val),
        accuracy_test: spread_of(runs, |r| r.accuracy_test),
        accuracy_generalization: spread_of(runs, |r| r.accuracy_generalization),
        per_step_mse: step_spreads(runs, |r| r.per_step_mse.as_ref()),
        generalization_mse: step_spreads(runs, |r| r.generalization_mse.as_ref()),
    }
}
