use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{LabelScheme, DEFAULT_FOLDS, DEFAULT_WINDOW_LEN};
use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentTask {
    /// Forward versus reverse.
    Classify2,
    Classify7,
    Classify4,
    Predict,
}

impl ExperimentTask {
    pub fn model_task(self) -> Task {
        match self {
            ExperimentTask::Predict => Task::Predict,
            _ => Task::Classify,
        }
    }

    pub fn scheme(self) -> Option<LabelScheme> {
        match self {
            ExperimentTask::Classify2 => Some(LabelScheme::Binary),
            ExperimentTask::Classify7 => Some(LabelScheme::Fine7),
            ExperimentTask::Classify4 => Some(LabelScheme::Coarse4),
            ExperimentTask::Predict => None,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            ExperimentTask::Predict => LossKind::Mse,
            _ => LossKind::Nll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub sampling_decay_epochs: usize,
    /// Defaults to the loss matching the experiment task.
    pub loss_kind: Option<LossKind>,
    pub seed: u64,
    pub fold_count: usize,
    pub window_len: usize,
    pub eval_rollout: usize,
    /// Windows per optimizer step; unset means one step per worm with all
    /// of its training windows.
    pub batch_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 800,
            plateau_patience: 50,
            lr_decay_factor: 0.25,
            sampling_decay_epochs: 300,
            loss_kind: None,
            seed: 0,
            fold_count: DEFAULT_FOLDS,
            window_len: DEFAULT_WINDOW_LEN,
            eval_rollout: 16,
            batch_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, task: ExperimentTask) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::config(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("plateau_patience", self.plateau_patience),
            ("sampling_decay_epochs", self.sampling_decay_epochs),
            ("eval_rollout", self.eval_rollout),
            ("batch_windows", self.batch_windows.unwrap_or(1)),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        let min_folds = if task == ExperimentTask::Predict { 2 } else { 3 };
        if self.fold_count < min_folds {
            return Err(Error::config(format!(
                "fold_count must be at least {min_folds} for {task:?}, got {}",
                self.fold_count
            )));
        }
        if self.window_len < 2 {
            return Err(Error::config(format!("window_len must be at least 2, got {}", self.window_len)));
        }
        if let Some(kind) = self.loss_kind {
            if kind != task.loss_kind() {
                return Err(Error::config(format!(
                    "loss_kind {kind:?} does not fit task {task:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Which worms are trained on (in permutations of a given size) and which
/// are only evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub train_worm_ids: Vec<String>,
    pub permutation_size: usize,
    #[serde(default)]
    pub held_out_worm_ids: Vec<String>,
    #[serde(default)]
    pub extended_eval_ids: Vec<String>,
    pub task: ExperimentTask,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train_worm_ids.iter().collect();
        if train.len() != self.train_worm_ids.len() {
            return Err(Error::config("train_worm_ids contains duplicates"));
        }
        if self.permutation_size == 0 || self.permutation_size > train.len() {
            return Err(Error::config(format!(
                "permutation_size {} outside 1..={}",
                self.permutation_size,
                train.len()
            )));
        }
        if let Some(both) = self.held_out_worm_ids.iter().find(|id| train.contains(id)) {
            return Err(Error::config(format!("worm `{both}` is both trained on and held out")));
        }
        Ok(())
    }

    /// Worms scored for cross-individual generalization: the held-out and
    /// extended-evaluation sets, deduplicated, in first-seen order.
    pub fn generalization_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.held_out_worm_ids
            .iter()
            .chain(&self.extended_eval_ids)
            .filter(|id| seen.insert(id.as_str()))
            .cloned()
            .collect()
    }
}
