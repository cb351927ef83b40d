//! Composite building blocks on top of the primitive graph operations.

use ndarray::ArrayD;
use rand::Rng;

use super::graph::{BatchStats, Graph, Tensor};
use super::params::{Bindings, ParamStore};
use crate::error::AutodiffError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether batch normalization uses batch statistics (and reports them)
/// or frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics collected during a training-mode forward pass, keyed
/// by batch-norm layer prefix. Applied to the store after the step.
#[derive(Debug, Default, Clone)]
pub struct StatsLog {
    entries: Vec<(String, BatchStats)>,
}

impl StatsLog {
    pub fn push(&mut self, prefix: &str, stats: BatchStats) {
        self.entries.push((prefix.to_string(), stats));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exponential moving average update of every running statistic,
    /// `running = (1 - momentum) * running + momentum * batch`. The
    /// running variance tracks the unbiased batch variance.
    pub fn apply(&self, store: &mut ParamStore, momentum: f64) {
        for (prefix, stats) in &self.entries {
            let n = stats.count as f64;
            let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
            if let Some(rm) = store.buffer_mut(&format!("{prefix}.running_mean")) {
                for (r, m) in rm.iter_mut().zip(&stats.mean) {
                    *r = (1.0 - momentum) * *r + momentum * m;
                }
            }
            if let Some(rv) = store.buffer_mut(&format!("{prefix}.running_var")) {
                for (r, v) in rv.iter_mut().zip(&stats.var) {
                    *r = (1.0 - momentum) * *r + momentum * v * correction;
                }
            }
        }
    }
}

/// Per-forward context: mode plus the statistics sink.
#[derive(Debug)]
pub struct Ctx<'a> {
    pub mode: Mode,
    pub store: &'a ParamStore,
    pub stats: StatsLog,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            mode,
            store,
            stats: StatsLog::default(),
        }
    }
}

pub fn register_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    store.insert_weight(format!("{prefix}.weight"), fan_in, fan_out, rng);
    store.insert_filled(format!("{prefix}.bias"), &[fan_out], 0.0);
}

/// `x W + b` for `x: [n, fan_in]`.
pub fn linear(g: &mut Graph, p: &Bindings, prefix: &str, x: Tensor) -> Result<Tensor, AutodiffError> {
    let w = p.get(&format!("{prefix}.weight"));
    let b = p.get(&format!("{prefix}.bias"));
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

pub fn register_batch_norm(store: &mut ParamStore, prefix: &str, features: usize) {
    store.insert_filled(format!("{prefix}.gamma"), &[features], 1.0);
    store.insert_filled(format!("{prefix}.beta"), &[features], 0.0);
    store.insert_buffer(
        format!("{prefix}.running_mean"),
        ArrayD::zeros(ndarray::IxDyn(&[features])),
    );
    store.insert_buffer(
        format!("{prefix}.running_var"),
        ArrayD::ones(ndarray::IxDyn(&[features])),
    );
}

/// Batch normalization over the rows of `x: [n, f]`.
///
/// In [`Mode::Eval`] this is the fixed affine map
/// `gamma * (x - running_mean) / sqrt(running_var + eps) + beta`.
pub fn batch_norm(
    g: &mut Graph,
    p: &Bindings,
    ctx: &mut Ctx<'_>,
    prefix: &str,
    x: Tensor,
) -> Result<Tensor, AutodiffError> {
    let gamma = p.get(&format!("{prefix}.gamma"));
    let beta = p.get(&format!("{prefix}.beta"));
    match ctx.mode {
        Mode::Train => {
            let (out, stats) = g.batch_norm(x, gamma, beta, BN_EPS)?;
            ctx.stats.push(prefix, stats);
            Ok(out)
        }
        Mode::Eval => {
            let rm = ctx
                .store
                .buffer(&format!("{prefix}.running_mean"))
                .expect("running mean registered")
                .clone();
            let inv = ctx
                .store
                .buffer(&format!("{prefix}.running_var"))
                .expect("running var registered")
                .mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let rm = g.constant(rm);
            let inv = g.constant(inv);
            let centered = g.sub(x, rm)?;
            let scaled = g.mul(centered, inv)?;
            let affine = g.mul(scaled, gamma)?;
            g.add(affine, beta)
        }
    }
}

pub fn register_lstm(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) {
    store.insert_weight(format!("{prefix}.w_input"), input, 4 * hidden, rng);
    store.insert_weight(format!("{prefix}.w_hidden"), hidden, 4 * hidden, rng);
    store.insert_filled(format!("{prefix}.bias"), &[4 * hidden], 0.0);
}

/// Hidden and cell state of a gated recurrent cell, each `[n, hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, rows: usize, hidden: usize) -> Self {
        let h = g.constant(ArrayD::zeros(ndarray::IxDyn(&[rows, hidden])));
        let c = g.constant(ArrayD::zeros(ndarray::IxDyn(&[rows, hidden])));
        Self { h, c }
    }
}

/// One step of a gated recurrent cell with input, forget and output gates
/// and a tanh candidate; gate blocks are laid out `[i | f | o | g]`.
pub fn lstm_cell(
    g: &mut Graph,
    p: &Bindings,
    prefix: &str,
    x: Tensor,
    state: LstmState,
) -> Result<LstmState, AutodiffError> {
    let hidden = g.shape(state.h)[1];
    let wx = p.get(&format!("{prefix}.w_input"));
    let wh = p.get(&format!("{prefix}.w_hidden"));
    let b = p.get(&format!("{prefix}.bias"));
    let xi = g.matmul(x, wx)?;
    let hh = g.matmul(state.h, wh)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add(pre, b)?;
    let i = g.narrow(pre, 1, 0, hidden)?;
    let f = g.narrow(pre, 1, hidden, hidden)?;
    let o = g.narrow(pre, 1, 2 * hidden, hidden)?;
    let cand = g.narrow(pre, 1, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}
