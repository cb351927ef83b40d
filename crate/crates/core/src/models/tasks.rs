//! Task heads: state classification over windows and Markovian
//! trajectory prediction with scheduled-sampling rollouts.

use ndarray::{s, Array2};
use rand::Rng;

use super::config::{EdgeMode, ModuleKind, Task, BURN_IN_STEPS, FEATURES};
use super::edges::{adjacency_for_frames, encode_dynamic_edges, encode_static_edges};
use super::network::{check_frames, connectome_batch, module_output, ModelState, RnnState};
use crate::autodiff::layers::Ctx;
use crate::autodiff::{Bindings, Graph, Tensor};
use crate::data::{LabelScheme, Window};
use crate::error::{Error, Result};

/// Step-major frames of a batch of windows: row `(t * B + b) * N + n`.
pub fn window_frames(windows: &[&Window]) -> Result<Array2<f64>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Shape("empty window batch".into()))?;
    let (n, w, f) = first.features.dim();
    let b = windows.len();
    let mut out = Array2::zeros((w * b * n, f));
    for (bi, win) in windows.iter().enumerate() {
        if win.features.dim() != (n, w, f) {
            return Err(Error::Shape(format!(
                "window {} of {} has shape {:?}, expected {:?}",
                win.start_index,
                win.worm_id,
                win.features.dim(),
                (n, w, f)
            )));
        }
        for t in 0..w {
            let row = (t * b + bi) * n;
            out.slice_mut(s![row..row + n, ..])
                .assign(&win.features.slice(s![.., t, ..]));
        }
    }
    Ok(out)
}

/// Class targets in the same step-major order as [`window_frames`];
/// `None` marks masked timesteps.
pub fn window_targets(windows: &[&Window], scheme: LabelScheme) -> Vec<Option<usize>> {
    let w = windows.first().map_or(0, |x| x.len());
    (0..w)
        .flat_map(|t| windows.iter().map(move |win| scheme.class_of(win.labels[t])))
        .collect()
}

/// Class logits `[W * B, k]` for every timestep of every window.
pub fn classify_windows(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    windows: &[&Window],
) -> Result<Tensor> {
    if model.config.task != Task::Classify {
        return Err(Error::Unsupported("model is not a classifier".into()));
    }
    let frames = window_frames(windows)?;
    let n = model.config.n_neurons;
    if frames.nrows() % n != 0 || windows[0].features.dim().0 != n {
        return Err(Error::Shape(format!(
            "windows carry {} neurons, model expects {n}",
            windows[0].features.dim().0
        )));
    }
    let steps = windows[0].len();
    let b = windows.len();
    let x = g.constant(frames.into_dyn());
    let is_gnn = model.config.module_kind == ModuleKind::Gnn;
    if !model.config.recurrent {
        let adjacency = if is_gnn {
            Some(adjacency_for_frames(g, p, ctx, model, x, steps)?)
        } else {
            None
        };
        return Ok(module_output(g, p, ctx, model, x, adjacency, None)?.0);
    }
    let static_a = if is_gnn && model.config.static_edges() {
        Some(encode_static_edges(g, p, ctx, model, x, steps)?)
    } else {
        None
    };
    let mut state = model.initial_rnn(g, b);
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.narrow(x, 0, t * b * n, b * n)?;
        let a = match (is_gnn, model.config.edge_mode) {
            (false, _) => None,
            (true, EdgeMode::Dynamic) => Some(encode_dynamic_edges(g, p, ctx, model, xt)?),
            (true, EdgeMode::Connectome) => Some(connectome_batch(g, model, b)?),
            (true, _) => static_a,
        };
        let (out, next) = module_output(g, p, ctx, model, xt, a, state)?;
        state = next;
        outs.push(out);
    }
    Ok(g.concat(&outs, 0)?)
}

/// Class probabilities and the most probable class of each row of `logits`
/// (ties resolved toward the lowest index).
pub fn classify(g: &mut Graph, logits: Tensor) -> Result<(Tensor, Vec<usize>)> {
    if g.shape(logits).len() != 2 {
        return Err(Error::Shape(format!(
            "classify expects [rows, k] logits, got {:?}",
            g.shape(logits)
        )));
    }
    let probs = g.softmax(logits, 1, 1.0)?;
    let predicted = argmax_rows(&g.value(probs).view().into_dimensionality().unwrap());
    Ok((probs, predicted))
}

pub fn argmax_rows(m: &ndarray::ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Adjacency source for a prediction rollout.
#[derive(Debug, Clone, Copy)]
pub enum StepEdges {
    /// No edges (non-graph modules).
    None,
    /// Re-infer from each input frame.
    Dynamic,
    /// A fixed `[B, N, N]` batch for the whole rollout.
    Fixed(Tensor),
}

/// One Markovian step `X^{t+1} = X^t + H` with `H = f(X^t)`.
pub fn predict_step(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    x: Tensor,
    edges: StepEdges,
    state: Option<RnnState>,
) -> Result<(Tensor, Option<RnnState>)> {
    if model.config.task != Task::Predict {
        return Err(Error::Unsupported("model is not a trajectory predictor".into()));
    }
    check_frames(g, model, x)?;
    let adjacency = match edges {
        StepEdges::None => None,
        StepEdges::Fixed(a) => Some(a),
        StepEdges::Dynamic => Some(encode_dynamic_edges(g, p, ctx, model, x)?),
    };
    let (h, state) = module_output(g, p, ctx, model, x, adjacency, state)?;
    Ok((g.add(x, h)?, state))
}

/// Iterates [`predict_step`] for `steps` steps starting at `initial`
/// (`[B * N, 2]`). Before each step after the first, the ground-truth
/// frame `teacher[s]` replaces the model's own prediction with
/// probability `sampling_prob` (one coin per step for the whole batch).
/// Recurrent models are always teacher-forced for the first
/// [`BURN_IN_STEPS`] inputs. Returns the `steps` predicted frames.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    model: &ModelState,
    initial: &Array2<f64>,
    steps: usize,
    teacher: Option<&[Array2<f64>]>,
    sampling_prob: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    if steps == 0 {
        return Err(Error::config("rollout needs at least one step"));
    }
    if !(0.0..=1.0).contains(&sampling_prob) {
        return Err(Error::config(format!("sampling probability {sampling_prob} outside [0, 1]")));
    }
    let recurrent = model.config.recurrent;
    let teacher_len = teacher.map_or(0, <[_]>::len);
    if sampling_prob > 0.0 && teacher_len < steps {
        return Err(Error::config(format!(
            "teacher has {teacher_len} frames, rollout of {steps} steps needs {steps}"
        )));
    }
    let burn_in = if recurrent { BURN_IN_STEPS.min(steps) } else { 0 };
    if recurrent && teacher_len < burn_in {
        return Err(Error::config(format!(
            "recurrent rollout needs {burn_in} teacher frames for burn-in, got {teacher_len}"
        )));
    }
    let n = model.config.n_neurons;
    if initial.ncols() != FEATURES || initial.nrows() % n != 0 || initial.nrows() == 0 {
        return Err(Error::Shape(format!(
            "initial frame {:?} does not match {n} neurons",
            initial.dim()
        )));
    }
    let b = initial.nrows() / n;

    let edges = if model.config.module_kind != ModuleKind::Gnn {
        StepEdges::None
    } else {
        match model.config.edge_mode {
            EdgeMode::Dynamic => StepEdges::Dynamic,
            EdgeMode::Connectome => StepEdges::Fixed(connectome_batch(g, model, b)?),
            EdgeMode::Static | EdgeMode::OneHot => {
                // context = initial frame plus any burn-in frames
                let mut ctx_frames = vec![initial.view()];
                if let Some(t) = teacher {
                    ctx_frames.extend(t.iter().take(burn_in).skip(1).map(|a| a.view()));
                }
                let stacked = ndarray::concatenate(ndarray::Axis(0), &ctx_frames)
                    .map_err(|e| Error::Shape(e.to_string()))?;
                let x = g.constant(stacked.into_dyn());
                StepEdges::Fixed(encode_static_edges(g, p, ctx, model, x, ctx_frames.len())?)
            }
        }
    };

    let mut state = model.initial_rnn(g, b);
    let mut input = g.constant(initial.clone().into_dyn());
    let mut preds = Vec::with_capacity(steps);
    for s in 0..steps {
        if s > 0 {
            let forced = s < burn_in || (sampling_prob > 0.0 && rng.random::<f64>() < sampling_prob);
            if forced {
                let frame = &teacher.expect("checked above")[s];
                if frame.dim() != initial.dim() {
                    return Err(Error::Shape(format!(
                        "teacher frame {s} is {:?}, expected {:?}",
                        frame.dim(),
                        initial.dim()
                    )));
                }
                input = g.constant(frame.clone().into_dyn());
            }
        }
        let (next, st) = predict_step(g, p, ctx, model, input, edges, state)?;
        state = st;
        preds.push(next);
        input = next;
    }
    Ok(preds)
}

/// Ground-truth frames `X^{t0}, ..., X^{t0 + len - 1}` of several
/// recordings' windows stacked as `[B * N, 2]` arrays.
pub fn stacked_frames(
    recordings: &[(&crate::data::WormRecording, usize)],
    len: usize,
) -> Result<Vec<Array2<f64>>> {
    let n = recordings
        .first()
        .map(|(r, _)| r.n_neurons())
        .ok_or_else(|| Error::Shape("no rollout starts".into()))?;
    let b = recordings.len();
    let mut out = vec![Array2::zeros((b * n, FEATURES)); len];
    for (bi, (rec, start)) in recordings.iter().enumerate() {
        if rec.n_neurons() != n {
            return Err(Error::Shape(format!(
                "{} has {} neurons, expected {n}",
                rec.worm_id,
                rec.n_neurons()
            )));
        }
        if start + len > rec.n_timesteps() {
            return Err(Error::Shape(format!(
                "{}: frames {start}..{} exceed length {}",
                rec.worm_id,
                start + len,
                rec.n_timesteps()
            )));
        }
        for (k, frame) in out.iter_mut().enumerate() {
            let t = start + k;
            frame
                .slice_mut(s![bi * n..(bi + 1) * n, 0])
                .assign(&rec.traces.column(t));
            frame
                .slice_mut(s![bi * n..(bi + 1) * n, 1])
                .assign(&rec.derivatives.column(t));
        }
    }
    Ok(out)
}
