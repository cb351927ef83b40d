//! Model zoo (MLP, per-node MLP, edge-inferring GNN, linear) and the two
//! task heads.

mod baseline;
mod checkpoint;
mod config;
mod edges;
mod network;
mod tasks;

pub use baseline::{linear_baseline, HingeConfig, LinearClassifier};
pub use checkpoint::{check_neuron_count, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{
    Aggregation, EdgeMode, ModelConfig, ModuleKind, Task, BURN_IN_STEPS, CLASSIFY_HIDDEN, FEATURES, ONE_HOT_TEMPERATURE,
    PREDICT_HIDDEN,
};
pub use edges::{
    edge_probabilities, encode_dynamic_edges, encode_edges, encode_static_edges, load_connectome_edges, parse_connectome, weight_correlation,
    AdjacencyMatrix,
};
pub use network::{gnn_forward, message_pass, mlp_forward, module_output, ModelState, RnnState, CONNECTOME_BUFFER};
pub use tasks::{
    argmax_rows, classify, classify_windows, predict_step, rollout, stacked_frames, window_frames, window_targets, StepEdges,
};

#[cfg(test)]
mod tests;
