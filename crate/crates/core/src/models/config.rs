use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    /// Aggregate node features, then a two-layer MLP.
    Mlp,
    /// One independent two-layer MLP per neuron.
    NodeMlp,
    /// Edge-inferring graph network with one message-passing step.
    Gnn,
    /// A single affine map of the aggregated features.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Predict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Edges re-inferred at every timestep.
    Dynamic,
    /// One edge set per window, from time-averaged node embeddings.
    Static,
    /// Fixed edges from a structural adjacency file.
    Connectome,
    /// Static edges pushed toward {0, 1} by a low softmax temperature.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Concatenate,
    Sum,
}

/// Softmax temperature used by [`EdgeMode::OneHot`].
pub const ONE_HOT_TEMPERATURE: f64 = 0.05;
pub const CLASSIFY_HIDDEN: usize = 16;
pub const PREDICT_HIDDEN: usize = 256;
/// Teacher-forced steps fed to recurrent models before free running.
pub const BURN_IN_STEPS: usize = 4;
/// Node feature channels: calcium trace and its derivative.
pub const FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub module_kind: ModuleKind,
    pub task: Task,
    pub hidden_dim: usize,
    pub edge_mode: EdgeMode,
    pub softmax_temperature: f64,
    pub aggregation: Aggregation,
    pub recurrent: bool,
    pub include_self_edges: bool,
    pub n_states: usize,
    pub n_neurons: usize,
}

impl ModelConfig {
    /// Defaults for state classification: hidden width 16, static edges.
    pub fn classifier(module_kind: ModuleKind, n_neurons: usize, n_states: usize) -> Self {
        Self {
            module_kind,
            task: Task::Classify,
            hidden_dim: CLASSIFY_HIDDEN,
            edge_mode: EdgeMode::Static,
            softmax_temperature: 1.0,
            aggregation: Aggregation::Concatenate,
            recurrent: false,
            include_self_edges: true,
            n_states,
            n_neurons,
        }
    }

    /// Defaults for trajectory prediction: hidden width 256, dynamic edges.
    pub fn predictor(module_kind: ModuleKind, n_neurons: usize) -> Self {
        Self {
            module_kind,
            task: Task::Predict,
            hidden_dim: PREDICT_HIDDEN,
            edge_mode: EdgeMode::Dynamic,
            softmax_temperature: 1.0,
            aggregation: Aggregation::Concatenate,
            recurrent: false,
            include_self_edges: true,
            n_states: 0,
            n_neurons,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be positive"));
        }
        if !(self.softmax_temperature > 0.0) {
            return Err(Error::config(format!(
                "softmax_temperature must be positive, got {}",
                self.softmax_temperature
            )));
        }
        if self.n_neurons == 0 {
            return Err(Error::config("n_neurons must be positive"));
        }
        if self.task == Task::Classify && self.n_states < 2 {
            return Err(Error::config(format!(
                "classification needs at least 2 states, got {}",
                self.n_states
            )));
        }
        if self.module_kind == ModuleKind::Linear && self.recurrent {
            return Err(Error::config("the linear module has no recurrent variant"));
        }
        Ok(())
    }

    /// Temperature applied to the edge softmax.
    pub fn edge_temperature(&self) -> f64 {
        match self.edge_mode {
            EdgeMode::OneHot => ONE_HOT_TEMPERATURE,
            _ => self.softmax_temperature,
        }
    }

    /// Whether edges are inferred once per window rather than per timestep.
    pub fn static_edges(&self) -> bool {
        matches!(self.edge_mode, EdgeMode::Static | EdgeMode::OneHot)
    }

    pub fn infers_edges(&self) -> bool {
        self.module_kind == ModuleKind::Gnn && self.edge_mode != EdgeMode::Connectome
    }
}
