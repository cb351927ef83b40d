//! TOML run configuration and the JSON manifests written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wormgraph::data::LabelScheme;
use wormgraph::models::{Aggregation, EdgeMode, ModelConfig, ModuleKind};
use wormgraph::synth::SynthConfig;
use wormgraph::training::{ExperimentPlan, ExperimentTask, TrainConfig};

use crate::error::{CliError, Result};

pub const MANIFEST_FORMAT: &str = "wormgraph-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Recording files, or directories whose `.json`/`.wrec` files are all loaded.
    pub recordings: Vec<PathBuf>,
    /// Neurons to keep, in order; absent neurons are an error.
    pub neurons: Option<Vec<String>>,
    /// Min-max scale traces and derivatives (default true).
    pub normalize: Option<bool>,
    pub checkpoint: Option<PathBuf>,
    pub connectome: Option<PathBuf>,
    /// Number of worms written by `gen-synth` (default 5).
    pub n_worms: Option<usize>,
    /// Recording encoding written by `gen-synth`: `json` (default) or `text`.
    pub format: Option<String>,
    /// Fold held out by `train` (default 0).
    pub fold: Option<usize>,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub plan: PlanSection,
    pub rollout: RolloutSection,
    pub pca: PcaSection,
}

/// Model options; neuron and state counts come from the data and task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub module_kind: Option<ModuleKind>,
    pub hidden_dim: Option<usize>,
    pub edge_mode: Option<EdgeMode>,
    pub softmax_temperature: Option<f64>,
    pub aggregation: Option<Aggregation>,
    pub recurrent: Option<bool>,
    pub include_self_edges: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub task: Option<ExperimentTask>,
    /// Defaults to every loaded worm that is not held out.
    pub train_worm_ids: Option<Vec<String>>,
    pub permutation_size: Option<usize>,
    pub held_out_worm_ids: Vec<String>,
    pub extended_eval_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub steps: usize,
    pub stride: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { steps: 16, stride: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    pub components: usize,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self { components: 3 }
    }
}

/// Everything needed to rerun a command bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub config: CliConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &CliConfig) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            seed: config.seed.unwrap_or(0),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }
}

fn config_error(path: &Path, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Reads a TOML config, or a manifest written by an earlier run of `command`.
/// Relative paths in a TOML file are taken relative to the file.
pub fn load_config(path: &Path, command: &str) -> Result<CliConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| config_error(path, e))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(config_error(path, format!("format: expected `{MANIFEST_FORMAT}`, got `{}`", manifest.format)));
        }
        if manifest.command != command {
            return Err(config_error(
                path,
                format!("command: manifest was written by `{}`, not `{command}`", manifest.command),
            ));
        }
        return Ok(manifest.config);
    }
    let mut config: CliConfig = toml::from_str(&text).map_err(|e| config_error(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.rebase(base);
    Ok(config)
}

impl CliConfig {
    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.recordings.iter_mut().for_each(join);
        for p in [&mut self.out, &mut self.checkpoint, &mut self.connectome].into_iter().flatten() {
            join(p);
        }
    }

    pub fn task(&self) -> ExperimentTask {
        self.plan.task.unwrap_or(ExperimentTask::Classify2)
    }

    pub fn normalize(&self) -> bool {
        self.normalize.unwrap_or(true)
    }

    /// Train config with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.unwrap_or(0),
            ..self.train.clone()
        }
    }

    pub fn model_config(&self, n_neurons: usize) -> ModelConfig {
        let kind = self.model.module_kind.unwrap_or(ModuleKind::Gnn);
        let task = self.task();
        let mut cfg = match task.scheme() {
            Some(scheme) => ModelConfig::classifier(kind, n_neurons, scheme.n_states()),
            None => ModelConfig::predictor(kind, n_neurons),
        };
        let m = &self.model;
        cfg.hidden_dim = m.hidden_dim.unwrap_or(cfg.hidden_dim);
        cfg.edge_mode = m.edge_mode.unwrap_or(cfg.edge_mode);
        cfg.softmax_temperature = m.softmax_temperature.unwrap_or(cfg.softmax_temperature);
        cfg.aggregation = m.aggregation.unwrap_or(cfg.aggregation);
        cfg.recurrent = m.recurrent.unwrap_or(cfg.recurrent);
        cfg.include_self_edges = m.include_self_edges.unwrap_or(cfg.include_self_edges);
        cfg
    }

    pub fn plan(&self, worm_ids: &[String]) -> ExperimentPlan {
        let p = &self.plan;
        let excluded = |id: &String| p.held_out_worm_ids.contains(id) || p.extended_eval_ids.contains(id);
        let train = p
            .train_worm_ids
            .clone()
            .unwrap_or_else(|| worm_ids.iter().filter(|id| !excluded(id)).cloned().collect());
        ExperimentPlan {
            train_worm_ids: train,
            permutation_size: p.permutation_size.unwrap_or(1),
            held_out_worm_ids: p.held_out_worm_ids.clone(),
            extended_eval_ids: p.extended_eval_ids.clone(),
            task: self.task(),
        }
    }
}

/// Label scheme of a classifier with `n_states` outputs.
pub fn scheme_for(n_states: usize) -> Option<LabelScheme> {
    [LabelScheme::Binary, LabelScheme::Coarse4, LabelScheme::Fine7]
        .into_iter()
        .find(|s| s.n_states() == n_states)
}
