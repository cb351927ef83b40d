use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{Ctx, Mode};
use crate::autodiff::Graph;
use crate::data::WormRecording;
use crate::error::{Error, Result};
use crate::models::{rollout, stacked_frames, ModelState, Task, FEATURES};
use crate::parallel::Execution;

/// Rollout windows evaluated together in one graph.
const EVAL_CHUNK: usize = 64;

/// Free-running rollout error per prediction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStepMse {
    /// Mean squared error at steps `1..=S` over every entry of every window.
    pub per_step: Vec<f64>,
    /// Same, split into the trace and derivative channels.
    pub per_channel: Vec<[f64; FEATURES]>,
    pub windows: usize,
    /// Window starts too close to the end of their recording.
    pub skipped: usize,
}

impl PerStepMse {
    /// `(step, mse)` at steps 1, 8 and 16, where available.
    pub fn summary(&self) -> Vec<(usize, f64)> {
        [1, 8, 16]
            .into_iter()
            .filter(|&s| s <= self.per_step.len())
            .map(|s| (s, self.per_step[s - 1]))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.per_step.iter().sum::<f64>() / self.per_step.len() as f64
    }
}

#[derive(Debug, Clone)]
struct ErrorSums {
    sq: Vec<[f64; FEATURES]>,
    windows: usize,
    skipped: usize,
}

impl ErrorSums {
    fn new(steps: usize) -> Self {
        Self {
            sq: vec![[0.0; FEATURES]; steps],
            windows: 0,
            skipped: 0,
        }
    }

    fn merge(&mut self, other: &ErrorSums) {
        for (a, b) in self.sq.iter_mut().zip(&other.sq) {
            for c in 0..FEATURES {
                a[c] += b[c];
            }
        }
        self.windows += other.windows;
        self.skipped += other.skipped;
    }

    fn finish(self, n_neurons: usize) -> PerStepMse {
        let denom = (self.windows * n_neurons) as f64;
        let per_channel: Vec<[f64; FEATURES]> = self
            .sq
            .iter()
            .map(|s| {
                let mut out = [0.0; FEATURES];
                for c in 0..FEATURES {
                    out[c] = if self.windows == 0 { f64::NAN } else { s[c] / denom };
                }
                out
            })
            .collect();
        let per_step = per_channel
            .iter()
            .map(|c| c.iter().sum::<f64>() / FEATURES as f64)
            .collect();
        PerStepMse {
            per_step,
            per_channel,
            windows: self.windows,
            skipped: self.skipped,
        }
    }
}

/// Window starts `0, stride, 2 * stride, ...` that tile the recording,
/// split into those with `steps + 1` frames available and the count of the rest.
pub fn rollout_starts(rec: &WormRecording, stride: usize, steps: usize) -> (Vec<usize>, usize) {
    let t = rec.n_timesteps();
    let all: Vec<usize> = (0..t / stride.max(1)).map(|i| i * stride).collect();
    let usable: Vec<usize> = all.iter().copied().filter(|&s| s + steps < t).collect();
    let skipped = all.len() - usable.len();
    (usable, skipped)
}

fn recording_errors(model: &ModelState, rec: &WormRecording, starts: &[usize], steps: usize) -> Result<ErrorSums> {
    let n = model.config.n_neurons;
    let mut sums = ErrorSums::new(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in starts.chunks(EVAL_CHUNK) {
        let items: Vec<(&WormRecording, usize)> = chunk.iter().map(|&s| (rec, s)).collect();
        let frames = stacked_frames(&items, steps + 1)?;
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let mut ctx = Ctx::new(&model.params, Mode::Eval);
        let preds = rollout(&mut g, &p, &mut ctx, model, &frames[0], steps, Some(&frames[..steps]), 0.0, &mut rng)?;
        for (s, pred) in preds.iter().enumerate() {
            let pv = g.value(*pred);
            let target = &frames[s + 1];
            for row in 0..chunk.len() * n {
                for c in 0..FEATURES {
                    sums.sq[s][c] += (pv[[row, c]] - target[[row, c]]).powi(2);
                }
            }
        }
        sums.windows += chunk.len();
    }
    Ok(sums)
}

/// Rolls the model out with no teacher forcing (recurrent models still get
/// their burn-in frames) from each window start of each recording, and
/// averages squared errors per prediction step.
pub fn per_step_mse(
    model: &ModelState,
    recordings: &[&WormRecording],
    steps: usize,
    stride: usize,
    execution: Execution,
) -> Result<PerStepMse> {
    if model.config.task != Task::Predict {
        return Err(Error::Unsupported("per-step MSE needs a trajectory predictor".into()));
    }
    if steps == 0 || stride == 0 {
        return Err(Error::config("rollout steps and stride must be positive"));
    }
    for rec in recordings {
        crate::models::check_neuron_count(model, rec.n_neurons())?;
    }
    let parts = execution.map(recordings, |_, rec| {
        let (starts, skipped) = rollout_starts(rec, stride, steps);
        let mut sums = recording_errors(model, rec, &starts, steps)?;
        sums.skipped += skipped;
        Ok::<_, Error>(sums)
    })?;
    let mut total = ErrorSums::new(steps);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.finish(model.config.n_neurons))
}

/// Per-step MSE over explicit `(recording, start)` pairs.
pub fn rollout_mse(model: &ModelState, items: &[(&WormRecording, usize)], steps: usize) -> Result<PerStepMse> {
    let mut total = ErrorSums::new(steps);
    let mut i = 0;
    while i < items.len() {
        // group consecutive items of one recording
        let rec = items[i].0;
        let mut j = i;
        while j < items.len() && std::ptr::eq(items[j].0, rec) {
            j += 1;
        }
        let starts: Vec<usize> = items[i..j].iter().map(|x| x.1).collect();
        total.merge(&recording_errors(model, rec, &starts, steps)?);
        i = j;
    }
    Ok(total.finish(model.config.n_neurons))
}
