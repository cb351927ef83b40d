use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis, IxDyn};

use super::config::{Aggregation, EdgeMode, ModuleKind, FEATURES};
use super::network::{check_frames, connectome_batch, mlp, ModelState};
use crate::autodiff::layers::{self, Ctx};
use crate::autodiff::{Bindings, Graph, Tensor};
use crate::error::{Error, Result};

/// An `N x N` weighted adjacency; `weights[[i, j]]` weighs the message
/// from neuron `j` into neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub weights: Array2<f64>,
    pub mode: EdgeMode,
    /// Window-relative timestep, for dynamic edges only.
    pub timestep: Option<usize>,
}

fn pair_indices(groups: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(groups * n * n);
    let mut dst = Vec::with_capacity(groups * n * n);
    for k in 0..groups {
        for i in 0..n {
            for j in 0..n {
                src.push(k * n + i);
                dst.push(k * n + j);
            }
        }
    }
    (src, dst)
}

/// Edge weights from per-node embeddings `[G * N, h]`: pair features go
/// through the edge MLP to a 2-logit vector, the (tempered) softmax gives
/// `p_ij`, and `w_ij` is its second component. Returns the weights
/// `[G, N, N]` and the full probabilities `[G * N * N, 2]`.
pub(crate) fn edges_from_embeddings(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    embeddings: Tensor,
    groups: usize,
) -> Result<(Tensor, Tensor)> {
    let cfg = &model.config;
    let n = cfg.n_neurons;
    let (src, dst) = pair_indices(groups, n);
    let hi = g.gather(embeddings, &src)?;
    let hj = g.gather(embeddings, &dst)?;
    let pair = match cfg.aggregation {
        Aggregation::Concatenate => g.concat(&[hi, hj], 1)?,
        Aggregation::Sum => g.add(hi, hj)?,
    };
    let hidden = mlp(g, p, ctx, "edge", pair)?;
    let logits = layers::linear(g, p, "edge_head", hidden)?;
    let probs = g.softmax(logits, 1, cfg.edge_temperature())?;
    let second = g.narrow(probs, 1, 1, 1)?;
    let mut weights = g.reshape(second, &[groups, n, n])?;
    if !cfg.include_self_edges {
        let mut mask = Array2::<f64>::ones((n, n));
        for i in 0..n {
            mask[[i, i]] = 0.0;
        }
        let mask = g.constant(mask.into_dyn());
        weights = g.mul(weights, mask)?;
    }
    Ok((weights, probs))
}

fn ensure_inferred(model: &ModelState) -> Result<()> {
    if model.config.module_kind != ModuleKind::Gnn {
        return Err(Error::Unsupported("edge encoding needs a GNN module".into()));
    }
    if model.config.edge_mode == EdgeMode::Connectome {
        return Err(Error::Unsupported(
            "connectome edges are loaded, not encoded; use load_connectome_edges".into(),
        ));
    }
    Ok(())
}

/// Per-timestep edges: one `[G, N, N]` batch for frames `[G * N, 2]`.
pub fn encode_dynamic_edges(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
) -> Result<Tensor> {
    ensure_inferred(model)?;
    let groups = check_frames(g, model, frames)?;
    let emb = mlp(g, p, ctx, "enc", frames)?;
    Ok(edges_from_embeddings(g, p, ctx, model, emb, groups)?.0)
}

/// Window-level edges: node embeddings are averaged over the `steps`
/// frames of each window before pairing. `frames` is `[steps * B * N, 2]`
/// in step-major order; returns `[B, N, N]`.
pub fn encode_static_edges(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    steps: usize,
) -> Result<Tensor> {
    ensure_inferred(model)?;
    let total = check_frames(g, model, frames)?;
    if steps == 0 || total % steps != 0 {
        return Err(Error::Shape(format!(
            "{total} frame groups cannot be split into {steps} steps"
        )));
    }
    let groups = total / steps;
    let n = model.config.n_neurons;
    let emb = mlp(g, p, ctx, "enc", frames)?;
    let h = model.config.hidden_dim;
    let emb = g.reshape(emb, &[steps, groups * n, h])?;
    let emb = g.mean(emb, 0)?;
    Ok(edges_from_embeddings(g, p, ctx, model, emb, groups)?.0)
}

/// Adjacency for every frame of a step-major `[steps * B * N, 2]` batch,
/// as `[steps * B, N, N]`. Static and connectome edges are shared by all
/// steps of a window.
pub(crate) fn adjacency_for_frames(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    frames: Tensor,
    steps: usize,
) -> Result<Tensor> {
    let total = check_frames(g, model, frames)?;
    let groups = total / steps;
    match model.config.edge_mode {
        EdgeMode::Dynamic => encode_dynamic_edges(g, p, ctx, model, frames),
        EdgeMode::Connectome => connectome_batch(g, model, total),
        EdgeMode::Static | EdgeMode::OneHot => {
            let a = encode_static_edges(g, p, ctx, model, frames, steps)?;
            let idx: Vec<usize> = (0..steps).flat_map(|_| 0..groups).collect();
            Ok(g.gather(a, &idx)?)
        }
    }
}

/// Inspection helper: inferred adjacency for a single window
/// `[N, W, 2]` in evaluation mode. Static modes return one matrix,
/// dynamic mode one per timestep.
pub fn encode_edges(model: &ModelState, window: &ndarray::Array3<f64>) -> Result<Vec<AdjacencyMatrix>> {
    Ok(inspect_edges(model, window)?.0)
}

/// The pair probabilities behind [`encode_edges`]: one `[N * N, 2]` matrix
/// per adjacency, row `i * N + j` holding `p_ij`.
pub fn edge_probabilities(model: &ModelState, window: &ndarray::Array3<f64>) -> Result<Vec<Array2<f64>>> {
    Ok(inspect_edges(model, window)?.1)
}

fn inspect_edges(
    model: &ModelState,
    window: &ndarray::Array3<f64>,
) -> Result<(Vec<AdjacencyMatrix>, Vec<Array2<f64>>)> {
    ensure_inferred(model)?;
    let (n, w, f) = window.dim();
    if n != model.config.n_neurons || f != FEATURES {
        return Err(Error::Shape(format!(
            "window is {:?}, model expects {} neurons x {FEATURES} features",
            window.dim(),
            model.config.n_neurons
        )));
    }
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let mut ctx = Ctx::new(&model.params, layers::Mode::Eval);
    // step-major frames: row t * N + n
    let frames = window.view().permuted_axes([1, 0, 2]).as_standard_layout().to_owned();
    let frames = g.constant(frames.into_shape_with_order(IxDyn(&[w * n, f])).unwrap());
    let emb = mlp(&mut g, &p, &mut ctx, "enc", frames)?;
    let dynamic = !model.config.static_edges();
    let (emb, groups) = if dynamic {
        (emb, w)
    } else {
        let h = model.config.hidden_dim;
        let e = g.reshape(emb, &[w, n, h])?;
        (g.mean(e, 0)?, 1)
    };
    let (a, probs) = edges_from_embeddings(&mut g, &p, &mut ctx, model, emb, groups)?;
    let mode = model.config.edge_mode;
    let mats = g
        .value(a)
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(t, m)| AdjacencyMatrix {
            weights: m.to_owned().into_dimensionality().unwrap(),
            mode,
            timestep: dynamic.then_some(t),
        })
        .collect();
    let probs = g
        .value(probs)
        .view()
        .into_shape_with_order((groups, n * n, 2))
        .unwrap()
        .outer_iter()
        .map(|m| m.to_owned())
        .collect();
    Ok((mats, probs))
}

/// Parses `source target weight` triples (whitespace or comma separated,
/// `#` comments) and builds the adjacency restricted to `neuron_names`.
/// Rows are scaled by their maximum so weights lie in `[0, 1]`; the
/// diagonal is set to 1 when `include_self_edges`.
pub fn load_connectome_edges(path: &Path, neuron_names: &[String], include_self_edges: bool) -> Result<AdjacencyMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_connectome(&text, neuron_names, include_self_edges).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_connectome(
    text: &str,
    neuron_names: &[String],
    include_self_edges: bool,
) -> std::result::Result<AdjacencyMatrix, String> {
    let index: HashMap<&str, usize> = neuron_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let n = neuron_names.len();
    let mut weights = Array2::<f64>::zeros((n, n));
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(format!(
                "line {}: expected `source target weight`, got {} fields",
                lineno + 1,
                fields.len()
            ));
        }
        let w: f64 = fields[2]
            .parse()
            .map_err(|_| format!("line {}: weight `{}` is not a number", lineno + 1, fields[2]))?;
        if !(w >= 0.0) || !w.is_finite() {
            return Err(format!("line {}: weight must be non-negative, got {w}", lineno + 1));
        }
        if let (Some(&i), Some(&j)) = (index.get(fields[0]), index.get(fields[1])) {
            weights[[i, j]] += w;
        }
    }
    for mut row in weights.rows_mut() {
        let max = row.fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
    for i in 0..n {
        weights[[i, i]] = if include_self_edges { 1.0 } else { 0.0 };
    }
    Ok(AdjacencyMatrix {
        weights,
        mode: EdgeMode::Connectome,
        timestep: None,
    })
}

/// Pearson correlation between two equally sized weight collections;
/// `None` when either side has zero variance or there are fewer than two pairs.
pub fn weight_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
