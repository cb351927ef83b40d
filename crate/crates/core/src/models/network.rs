//! Parameter layout and forward passes of the module zoo.
//!
//! Frames are laid out as `[G * N, 2]` tensors: row `g * N + n` holds the
//! trace and derivative of neuron `n` in sample `g`. Adjacency batches are
//! `[G, N, N]`.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Aggregation, EdgeMode, ModelConfig, ModuleKind, Task, FEATURES};
use crate::autodiff::layers::{self, Ctx, LstmState};
use crate::autodiff::{Bindings, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CONNECTOME_BUFFER: &str = "edges.connectome";

/// A model configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn register_mlp(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) {
    layers::register_linear(store, &format!("{prefix}.fc1"), input, hidden, rng);
    layers::register_batch_norm(store, &format!("{prefix}.bn1"), hidden);
    layers::register_linear(store, &format!("{prefix}.fc2"), hidden, hidden, rng);
    layers::register_batch_norm(store, &format!("{prefix}.bn2"), hidden);
}

/// Two linear layers, each followed by ReLU and batch normalization.
pub(crate) fn mlp(g: &mut Graph, p: &Bindings, ctx: &mut Ctx<'_>, prefix: &str, x: Tensor) -> Result<Tensor> {
    let h = layers::linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.relu(h);
    let h = layers::batch_norm(g, p, ctx, &format!("{prefix}.bn1"), h)?;
    let h = layers::linear(g, p, &format!("{prefix}.fc2"), h)?;
    let h = g.relu(h);
    Ok(layers::batch_norm(g, p, ctx, &format!("{prefix}.bn2"), h)?)
}

/// Recurrent state threaded through successive frames.
#[derive(Debug, Clone, Copy)]
pub struct RnnState(pub(crate) LstmState);

impl ModelState {
    /// Registers parameters for `config`, drawing initial weights from `seed`.
    /// Predictors get zero residual-decoder weights, so they start as the identity map.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (n, h) = (config.n_neurons, config.hidden_dim);
        let agg_width = |per_node: usize| match config.aggregation {
            Aggregation::Concatenate => n * per_node,
            Aggregation::Sum => per_node,
        };
        let out_width = match config.task {
            Task::Classify => config.n_states,
            Task::Predict => n * FEATURES,
        };
        match config.module_kind {
            ModuleKind::Linear => {
                layers::register_linear(&mut store, "head", agg_width(FEATURES), out_width, &mut rng);
            }
            ModuleKind::Mlp => {
                let mut input = agg_width(FEATURES);
                if config.recurrent {
                    layers::register_lstm(&mut store, "rnn", input, h, &mut rng);
                    input = h;
                }
                register_mlp(&mut store, "g", input, h, &mut rng);
                layers::register_linear(&mut store, "head", h, out_width, &mut rng);
            }
            ModuleKind::NodeMlp => {
                for node in 0..n {
                    let mut input = FEATURES;
                    if config.recurrent {
                        layers::register_lstm(&mut store, &format!("node{node}.rnn"), input, h, &mut rng);
                        input = h;
                    }
                    register_mlp(&mut store, &format!("node{node}.g"), input, h, &mut rng);
                    if config.task == Task::Predict {
                        layers::register_linear(&mut store, &format!("node{node}.head"), h, FEATURES, &mut rng);
                    }
                }
                if config.task == Task::Classify {
                    layers::register_linear(&mut store, "head", agg_width(h), config.n_states, &mut rng);
                }
            }
            ModuleKind::Gnn => {
                if config.infers_edges() {
                    register_mlp(&mut store, "enc", FEATURES, h, &mut rng);
                    let pair = match config.aggregation {
                        Aggregation::Concatenate => 2 * h,
                        Aggregation::Sum => h,
                    };
                    register_mlp(&mut store, "edge", pair, h, &mut rng);
                    layers::register_linear(&mut store, "edge_head", h, 2, &mut rng);
                } else {
                    store.insert_buffer(CONNECTOME_BUFFER, ArrayD::zeros(IxDyn(&[n, n])));
                }
                let mut input = match config.task {
                    Task::Classify => agg_width(FEATURES),
                    Task::Predict => FEATURES,
                };
                if config.recurrent {
                    layers::register_lstm(&mut store, "rnn", input, h, &mut rng);
                    input = h;
                }
                register_mlp(&mut store, "g", input, h, &mut rng);
                let head_out = match config.task {
                    Task::Classify => config.n_states,
                    Task::Predict => FEATURES,
                };
                layers::register_linear(&mut store, "head", h, head_out, &mut rng);
            }
        }
        if config.task == Task::Predict {
            for (name, value) in store.iter_mut() {
                if name.ends_with("head.weight") {
                    value.fill(0.0);
                }
            }
        }
        Ok(Self { config, params: store })
    }

    /// Installs a structural adjacency for [`EdgeMode::Connectome`].
    pub fn set_connectome(&mut self, weights: &Array2<f64>) -> Result<()> {
        let n = self.config.n_neurons;
        if self.config.module_kind != ModuleKind::Gnn || self.config.edge_mode != EdgeMode::Connectome {
            return Err(Error::Unsupported("model does not use connectome edges".into()));
        }
        if weights.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "connectome is {:?}, model has {n} neurons",
                weights.dim()
            )));
        }
        *self.params.buffer_mut(CONNECTOME_BUFFER).unwrap() = weights.clone().into_dyn();
        Ok(())
    }

    pub fn connectome(&self) -> Option<&ArrayD<f64>> {
        self.params.buffer(CONNECTOME_BUFFER)
    }

    pub fn n_neurons(&self) -> usize {
        self.config.n_neurons
    }

    /// Zero recurrent state for `rows` samples, if the model is recurrent.
    pub fn initial_rnn(&self, g: &mut Graph, samples: usize) -> Option<RnnState> {
        if !self.config.recurrent {
            return None;
        }
        let rows = match (self.config.module_kind, self.config.task) {
            (ModuleKind::Gnn, Task::Predict) | (ModuleKind::NodeMlp, _) => samples * self.config.n_neurons,
            _ => samples,
        };
        Some(RnnState(LstmState::zeros(g, rows, self.config.hidden_dim)))
    }
}

pub(crate) fn check_frames(g: &Graph, model: &ModelState, frames: Tensor) -> Result<usize> {
    let shape = g.shape(frames);
    let n = model.config.n_neurons;
    if shape.len() != 2 || shape[1] != FEATURES || shape[0] % n != 0 || shape[0] == 0 {
        return Err(Error::Shape(format!(
            "expected frames of shape [G * {n}, {FEATURES}], got {shape:?} (model has {n} neurons)"
        )));
    }
    Ok(shape[0] / n)
}

fn aggregate_nodes(g: &mut Graph, x: Tensor, groups: usize, n: usize, width: usize, agg: Aggregation) -> Result<Tensor> {
    Ok(match agg {
        Aggregation::Concatenate => g.reshape(x, &[groups, n * width])?,
        Aggregation::Sum => {
            let r = g.reshape(x, &[groups, n, width])?;
            g.sum(r, 1)?
        }
    })
}

fn recur(
    g: &mut Graph,
    p: &Bindings,
    prefix: &str,
    x: Tensor,
    state: Option<RnnState>,
) -> Result<(Tensor, Option<RnnState>)> {
    match state {
        None => Ok((x, None)),
        Some(RnnState(s)) => {
            let next = layers::lstm_cell(g, p, prefix, x, s)?;
            Ok((next.h, Some(RnnState(next))))
        }
    }
}

fn require_state(model: &ModelState, state: &Option<RnnState>) -> Result<()> {
    if model.config.recurrent != state.is_some() {
        return Err(Error::Unsupported(if model.config.recurrent {
            "recurrent model needs a recurrent state".into()
        } else {
            "feed-forward model given a recurrent state".into()
        }));
    }
    Ok(())
}

/// Hidden output `H_out = g(Aggregation(x_1, ..., x_N))` of the MLP
/// module, `[G, hidden_dim]`.
pub fn mlp_forward(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    state: Option<RnnState>,
) -> Result<(Tensor, Option<RnnState>)> {
    if model.config.module_kind != ModuleKind::Mlp {
        return Err(Error::Unsupported("mlp_forward needs an MLP module".into()));
    }
    require_state(model, &state)?;
    let groups = check_frames(g, model, frames)?;
    let cfg = &model.config;
    let agg = aggregate_nodes(g, frames, groups, cfg.n_neurons, FEATURES, cfg.aggregation)?;
    let (x, state) = recur(g, p, "rnn", agg, state)?;
    Ok((mlp(g, p, ctx, "g", x)?, state))
}

/// Per-node hidden features of the NodeMLP module, `[G * N, hidden_dim]`.
fn node_mlp_hidden(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    state: Option<RnnState>,
) -> Result<(Vec<Tensor>, Option<RnnState>)> {
    let groups = check_frames(g, model, frames)?;
    let n = model.config.n_neurons;
    let h = model.config.hidden_dim;
    let mut outs = Vec::with_capacity(n);
    let mut h_parts = Vec::new();
    let mut c_parts = Vec::new();
    for node in 0..n {
        let rows: Vec<usize> = (0..groups).map(|k| k * n + node).collect();
        let x = g.gather(frames, &rows)?;
        let x = match state {
            Some(RnnState(s)) => {
                let hs = g.gather(s.h, &rows)?;
                let cs = g.gather(s.c, &rows)?;
                let next = layers::lstm_cell(g, p, &format!("node{node}.rnn"), x, LstmState { h: hs, c: cs })?;
                h_parts.push(next.h);
                c_parts.push(next.c);
                next.h
            }
            None => x,
        };
        outs.push(mlp(g, p, ctx, &format!("node{node}.g"), x)?);
    }
    let state = if state.is_some() {
        // node-major parts back to [G * N, h] sample-major rows
        let hs = g.concat(&h_parts, 1)?;
        let cs = g.concat(&c_parts, 1)?;
        let hs = g.reshape(hs, &[groups * n, h])?;
        let cs = g.reshape(cs, &[groups * n, h])?;
        Some(RnnState(LstmState { h: hs, c: cs }))
    } else {
        None
    };
    Ok((outs, state))
}

/// `H = A X` for every sample: `A: [G, N, N]`, frames `[G * N, F]` in,
/// `[G * N, F]` out.
pub fn message_pass(g: &mut Graph, adjacency: Tensor, frames: Tensor) -> Result<Tensor> {
    let a = g.shape(adjacency).to_vec();
    let x = g.shape(frames).to_vec();
    if a.len() != 3 || a[1] != a[2] || x.len() != 2 || x[0] != a[0] * a[1] {
        return Err(Error::Shape(format!(
            "message_pass: adjacency {a:?} incompatible with node features {x:?}"
        )));
    }
    let xs = g.reshape(frames, &[a[0], a[1], x[1]])?;
    let h = g.bmm(adjacency, xs)?;
    Ok(g.reshape(h, &[x[0], x[1]])?)
}

/// Output of the graph module. For classification this is the hidden
/// `[G, hidden_dim]` graph representation; for prediction the per-node
/// residuals `[G * N, 2]` decoded by the shared node decoder.
pub fn gnn_forward(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    adjacency: Tensor,
    state: Option<RnnState>,
) -> Result<(Tensor, Option<RnnState>)> {
    if model.config.module_kind != ModuleKind::Gnn {
        return Err(Error::Unsupported("gnn_forward needs a GNN module".into()));
    }
    require_state(model, &state)?;
    let groups = check_frames(g, model, frames)?;
    let cfg = &model.config;
    let messages = message_pass(g, adjacency, frames)?;
    match cfg.task {
        Task::Classify => {
            let agg = aggregate_nodes(g, messages, groups, cfg.n_neurons, FEATURES, cfg.aggregation)?;
            let (x, state) = recur(g, p, "rnn", agg, state)?;
            Ok((mlp(g, p, ctx, "g", x)?, state))
        }
        Task::Predict => {
            let (x, state) = recur(g, p, "rnn", messages, state)?;
            let hidden = mlp(g, p, ctx, "g", x)?;
            Ok((layers::linear(g, p, "head", hidden)?, state))
        }
    }
}

/// Connectome adjacency replicated over `groups` samples.
pub(crate) fn connectome_batch(g: &mut Graph, model: &ModelState, groups: usize) -> Result<Tensor> {
    let n = model.config.n_neurons;
    let base = model
        .connectome()
        .ok_or_else(|| Error::Unsupported("model has no connectome buffer".into()))?;
    let mut a = base.clone();
    if !model.config.include_self_edges {
        for i in 0..n {
            a[[i, i]] = 0.0;
        }
    }
    let t = g.constant(a.into_shape_with_order(IxDyn(&[1, n, n])).unwrap());
    Ok(g.gather(t, &vec![0; groups])?)
}

/// Raw module output: class logits `[G, k]` for classification, residual
/// `H` as `[G * N, 2]` for prediction. `adjacency` is required for GNNs.
pub fn module_output(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    adjacency: Option<Tensor>,
    state: Option<RnnState>,
) -> Result<(Tensor, Option<RnnState>)> {
    let cfg = &model.config;
    let groups = check_frames(g, model, frames)?;
    let n = cfg.n_neurons;
    match cfg.module_kind {
        ModuleKind::Linear => {
            require_state(model, &state)?;
            let agg = aggregate_nodes(g, frames, groups, n, FEATURES, cfg.aggregation)?;
            let out = layers::linear(g, p, "head", agg)?;
            Ok((finish(g, cfg, out, groups)?, None))
        }
        ModuleKind::Mlp => {
            let (hidden, state) = mlp_forward(g, p, ctx, model, frames, state)?;
            let out = layers::linear(g, p, "head", hidden)?;
            Ok((finish(g, cfg, out, groups)?, state))
        }
        ModuleKind::NodeMlp => {
            require_state(model, &state)?;
            let (hidden, state) = node_mlp_hidden(g, p, ctx, model, frames, state)?;
            match cfg.task {
                Task::Classify => {
                    let agg = match cfg.aggregation {
                        Aggregation::Concatenate => g.concat(&hidden, 1)?,
                        Aggregation::Sum => {
                            let mut acc = hidden[0];
                            for h in &hidden[1..] {
                                acc = g.add(acc, *h)?;
                            }
                            acc
                        }
                    };
                    Ok((layers::linear(g, p, "head", agg)?, state))
                }
                Task::Predict => {
                    let mut parts = Vec::with_capacity(n);
                    for (node, h) in hidden.into_iter().enumerate() {
                        parts.push(layers::linear(g, p, &format!("node{node}.head"), h)?);
                    }
                    let joined = g.concat(&parts, 1)?;
                    Ok((g.reshape(joined, &[groups * n, FEATURES])?, state))
                }
            }
        }
        ModuleKind::Gnn => {
            let adjacency = adjacency.ok_or_else(|| Error::Unsupported("GNN forward needs an adjacency".into()))?;
            let (out, state) = gnn_forward(g, p, ctx, model, frames, adjacency, state)?;
            match cfg.task {
                Task::Classify => Ok((layers::linear(g, p, "head", out)?, state)),
                Task::Predict => Ok((out, state)),
            }
        }
    }
}

fn finish(g: &mut Graph, cfg: &ModelConfig, out: Tensor, groups: usize) -> Result<Tensor> {
    Ok(match cfg.task {
        Task::Classify => out,
        Task::Predict => g.reshape(out, &[groups * cfg.n_neurons, FEATURES])?,
    })
}
