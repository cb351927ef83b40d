use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentPlan, ExperimentTask, TrainConfig};
use super::loss::{mse_loss, nll_loss};
use super::optim::{sampling_prob, Adam, PlateauScheduler};
use crate::autodiff::layers::{Ctx, Mode, BN_MOMENTUM};
use crate::autodiff::Graph;
use crate::data::{assign_folds, windowize, FoldAssignment, FoldSplit, LabelScheme, Window, WormRecording};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, confusion_matrix, per_step_mse, predict_windows, rollout_mse, window_accuracy, RunMetrics,
};
use crate::models::{
    check_neuron_count, classify_windows, rollout, stacked_frames, ModelConfig, ModelState,
};
use crate::parallel::Execution;
use crate::synth::mix_seed;

/// Stream tag separating data-shuffling seeds from run seeds.
const DATA_STREAM: u64 = 0xda7a;
const INIT_STREAM: u64 = 0x1417;
/// Windows per evaluation graph when computing validation loss.
const EVAL_CHUNK: usize = 256;

/// A model configuration plus the fixed edges it may need.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTemplate {
    pub config: ModelConfig,
    pub connectome: Option<Array2<f64>>,
}

impl ModelTemplate {
    pub fn new(config: ModelConfig) -> Self {
        Self { config, connectome: None }
    }

    pub fn instantiate(&self, seed: u64) -> Result<ModelState> {
        let mut model = ModelState::new(self.config.clone(), seed)?;
        if let Some(c) = &self.connectome {
            model.set_connectome(c)?;
        }
        Ok(model)
    }
}

/// A worm's windows and, for training worms, their fold assignment.
#[derive(Debug, Clone)]
pub struct PreparedWorm {
    pub recording: WormRecording,
    pub windows: Vec<Window>,
    pub folds: Option<FoldAssignment>,
}

/// Windowed and fold-assigned data for one experiment plan. Fold
/// assignments depend only on the master seed and each worm's position in
/// the plan, so every run of a plan sees the same folds.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub worms: BTreeMap<String, PreparedWorm>,
}

impl PreparedData {
    pub fn new(plan: &ExperimentPlan, cfg: &TrainConfig, recordings: &[WormRecording]) -> Result<Self> {
        plan.validate()?;
        let by_id: BTreeMap<&str, &WormRecording> = recordings.iter().map(|r| (r.worm_id.as_str(), r)).collect();
        let lookup = |id: &str| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::config(format!("plan names worm `{id}` but no recording has that id")))
        };
        let mut worms = BTreeMap::new();
        for (i, id) in plan.train_worm_ids.iter().enumerate() {
            let rec = lookup(id)?;
            let seed = mix_seed(&[cfg.seed, DATA_STREAM, i as u64]);
            let windows = windowize(rec, cfg.window_len, seed)?;
            let folds = assign_folds(&windows, cfg.fold_count, seed)
                .map_err(|e| Error::config(format!("worm `{id}`: {e}")))?;
            worms.insert(
                id.clone(),
                PreparedWorm {
                    recording: rec.clone(),
                    windows,
                    folds: Some(folds),
                },
            );
        }
        for id in plan.generalization_ids() {
            let rec = lookup(&id)?;
            let windows = windowize(rec, cfg.window_len, 0)?;
            worms.insert(
                id,
                PreparedWorm {
                    recording: rec.clone(),
                    windows,
                    folds: None,
                },
            );
        }
        let n = worms.values().next().map(|w| w.recording.n_neurons());
        if let Some(bad) = worms.values().find(|w| Some(w.recording.n_neurons()) != n) {
            return Err(Error::Shape(format!(
                "worm `{}` has {} neurons, others have {}",
                bad.recording.worm_id,
                bad.recording.n_neurons(),
                n.unwrap()
            )));
        }
        Ok(Self { worms })
    }

    fn worm(&self, id: &str) -> Result<&PreparedWorm> {
        self.worms
            .get(id)
            .ok_or_else(|| Error::config(format!("worm `{id}` was not prepared")))
    }
}

/// One (permutation, fold) cell of an experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub permutation: usize,
    pub fold: usize,
    pub train_worms: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub optimizer: Adam,
    pub scheduler: PlateauScheduler,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub best_checkpoint: ModelState,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub state: TrainState,
    /// Parameters after the last epoch (the best ones are in `state`).
    pub final_model: ModelState,
}

/// Per-worm window indices for one cell, as (train, validation, test).
struct CellSplits<'a> {
    worms: Vec<(&'a PreparedWorm, FoldSplit)>,
}

impl<'a> CellSplits<'a> {
    fn new(data: &'a PreparedData, spec: &RunSpec, task: ExperimentTask) -> Result<Self> {
        let mut worms = Vec::new();
        for id in &spec.train_worms {
            let w = data.worm(id)?;
            let folds = w
                .folds
                .as_ref()
                .ok_or_else(|| Error::config(format!("worm `{id}` is not a training worm")))?;
            let split = match task {
                ExperimentTask::Predict => folds.split_validation_only(spec.fold),
                _ => folds.split(spec.fold),
            };
            worms.push((w, split));
        }
        Ok(Self { worms })
    }

    fn collect(&self, pick: impl Fn(&FoldSplit) -> &Vec<usize>) -> Vec<&'a Window> {
        self.worms
            .iter()
            .flat_map(|(w, s)| pick(s).iter().map(move |&i| &w.windows[i]))
            .collect()
    }
}

/// Rollout starts of `windows` that have `steps + 1` frames available.
fn rollout_items<'a>(data: &'a PreparedData, windows: &[&Window], steps: usize) -> Result<Vec<(&'a WormRecording, usize)>> {
    let mut items = Vec::new();
    for w in windows {
        let rec = &data.worm(&w.worm_id)?.recording;
        if w.start_index + steps < rec.n_timesteps() {
            items.push((rec, w.start_index));
        }
    }
    // group by recording so evaluation can batch per worm
    items.sort_by(|a, b| a.0.worm_id.cmp(&b.0.worm_id).then(a.1.cmp(&b.1)));
    Ok(items)
}

fn classification_loss(model: &ModelState, windows: &[&Window], scheme: LabelScheme) -> Result<f64> {
    let k = scheme.n_states();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in windows.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let mut ctx = Ctx::new(&model.params, Mode::Eval);
        let logits = classify_windows(&mut g, &p, &mut ctx, model, chunk)?;
        let probs = g.softmax(logits, 1, 1.0)?;
        let targets = crate::models::window_targets(chunk, scheme);
        let labeled = targets.iter().filter(|t| t.is_some()).count();
        if labeled == 0 {
            continue;
        }
        let loss = nll_loss(&mut g, probs, &targets, k)?;
        total += g.scalar(loss) * labeled as f64;
        count += labeled;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Validation loss of `model` for the cell described by `spec`.
pub fn validation_loss(
    model: &ModelState,
    task: ExperimentTask,
    cfg: &TrainConfig,
    data: &PreparedData,
    spec: &RunSpec,
) -> Result<f64> {
    let splits = CellSplits::new(data, spec, task)?;
    let val = splits.collect(|s| &s.validation);
    match task.scheme() {
        Some(scheme) => classification_loss(model, &val, scheme),
        None => {
            let items = rollout_items(data, &val, cfg.window_len)?;
            if items.is_empty() {
                return Err(Error::config("no validation window has enough frames for a rollout"));
            }
            Ok(rollout_mse(model, &items, cfg.window_len)?.mean())
        }
    }
}

/// One optimizer step on a batch; returns the batch loss.
fn optimize_batch(
    model: &mut ModelState,
    optimizer: &mut Adam,
    task: ExperimentTask,
    cfg: &TrainConfig,
    data: &PreparedData,
    batch: &[&Window],
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let mut ctx = Ctx::new(&model.params, Mode::Train);
    let loss = match task.scheme() {
        Some(scheme) => {
            let logits = classify_windows(&mut g, &p, &mut ctx, model, batch)?;
            let probs = g.softmax(logits, 1, 1.0)?;
            let targets = crate::models::window_targets(batch, scheme);
            nll_loss(&mut g, probs, &targets, scheme.n_states())?
        }
        None => {
            let w = cfg.window_len;
            let items = rollout_items(data, batch, w)?;
            let frames = stacked_frames(&items, w + 1)?;
            let prob = sampling_prob(epoch, cfg.sampling_decay_epochs);
            let preds = rollout(&mut g, &p, &mut ctx, model, &frames[0], w, Some(&frames[..w]), prob, rng)?;
            let targets: Vec<_> = frames[1..].iter().map(|f| g.constant(f.clone().into_dyn())).collect();
            mse_loss(&mut g, &preds, &targets)?.0
        }
    };
    let value = g.scalar(loss);
    let stats = std::mem::take(&mut ctx.stats);
    g.backward(loss)?;
    let grads = p.gradients(&g);
    optimizer.step(&mut model.params, &grads)?;
    stats.apply(&mut model.params, BN_MOMENTUM);
    Ok(value)
}

fn trainable<'a>(
    task: ExperimentTask,
    cfg: &TrainConfig,
    data: &PreparedData,
    windows: Vec<&'a Window>,
) -> Result<Vec<&'a Window>> {
    if task != ExperimentTask::Predict {
        return Ok(windows);
    }
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        if w.start_index + cfg.window_len < data.worm(&w.worm_id)?.recording.n_timesteps() {
            out.push(w);
        }
    }
    Ok(out)
}

/// Trains from `model` on one cell and scores the best-validation
/// checkpoint.
pub fn train_run(
    model: ModelState,
    task: ExperimentTask,
    cfg: &TrainConfig,
    data: &PreparedData,
    spec: &RunSpec,
    generalization_ids: &[String],
) -> Result<RunOutcome> {
    cfg.validate(task)?;
    if model.config.task != task.model_task() {
        return Err(Error::config(format!(
            "model task {:?} does not match experiment task {task:?}",
            model.config.task
        )));
    }
    if let Some(scheme) = task.scheme() {
        if model.config.n_states != scheme.n_states() {
            return Err(Error::config(format!(
                "model has {} states, task {task:?} has {}",
                model.config.n_states,
                scheme.n_states()
            )));
        }
    }
    let started = Instant::now();
    let splits = CellSplits::new(data, spec, task)?;
    for (w, _) in &splits.worms {
        check_neuron_count(&model, w.recording.n_neurons())?;
    }
    let per_worm_train: Vec<Vec<&Window>> = splits
        .worms
        .iter()
        .map(|(w, s)| trainable(task, cfg, data, s.train.iter().map(|&i| &w.windows[i]).collect()))
        .collect::<Result<_>>()?;
    if per_worm_train.iter().all(|w| w.is_empty()) {
        return Err(Error::config("empty training set"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut model = model;
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut scheduler = PlateauScheduler::new(cfg.learning_rate, cfg.lr_decay_factor, cfg.plateau_patience);
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_checkpoint = model.clone();
    let mut history = Vec::with_capacity(cfg.max_epochs);

    for epoch in 0..cfg.max_epochs {
        let mut worm_order: Vec<usize> = (0..per_worm_train.len()).collect();
        worm_order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for &wi in &worm_order {
            let mut windows = per_worm_train[wi].clone();
            if windows.is_empty() {
                continue;
            }
            windows.shuffle(&mut rng);
            let size = cfg.batch_windows.unwrap_or(windows.len());
            for batch in windows.chunks(size) {
                loss_sum += optimize_batch(&mut model, &mut optimizer, task, cfg, data, batch, epoch, &mut rng)?;
                batches += 1;
            }
        }
        let val_loss = validation_loss(&model, task, cfg, data, spec)?;
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_checkpoint = model.clone();
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            lr: optimizer.lr,
        });
        optimizer.lr = scheduler.step(val_loss);
    }

    let best = &best_checkpoint;
    let mut metrics = RunMetrics {
        permutation: spec.permutation,
        fold: spec.fold,
        train_worms: spec.train_worms.clone(),
        task,
        seed: spec.seed,
        accuracy_train: None,
        accuracy_val: None,
        accuracy_test: None,
        accuracy_generalization: None,
        confusion: None,
        per_step_mse: None,
        generalization_mse: None,
        epochs: cfg.max_epochs,
        best_epoch,
        best_val_loss,
        final_lr: optimizer.lr,
        runtime_s: 0.0,
    };
    let gen_worms: Vec<&PreparedWorm> = generalization_ids.iter().map(|id| data.worm(id)).collect::<Result<_>>()?;
    match task.scheme() {
        Some(scheme) => {
            let train = splits.collect(|s| &s.train);
            let val = splits.collect(|s| &s.validation);
            let test = splits.collect(|s| &s.test);
            metrics.accuracy_train = window_accuracy(best, &train, scheme)?;
            metrics.accuracy_val = window_accuracy(best, &val, scheme)?;
            let (pred, targets) = predict_windows(best, &test, scheme)?;
            metrics.accuracy_test = accuracy(&pred, &targets)?;
            metrics.confusion = Some(confusion_matrix(&pred, &targets, scheme.n_states())?);
            let gen: Vec<&Window> = gen_worms.iter().flat_map(|w| w.windows.iter()).collect();
            metrics.accuracy_generalization = window_accuracy(best, &gen, scheme)?;
        }
        None => {
            let val = splits.collect(|s| &s.validation);
            let items = rollout_items(data, &val, cfg.eval_rollout)?;
            if !items.is_empty() {
                metrics.per_step_mse = Some(rollout_mse(best, &items, cfg.eval_rollout)?.per_step);
            }
            if !gen_worms.is_empty() {
                let recs: Vec<&WormRecording> = gen_worms.iter().map(|w| &w.recording).collect();
                let m = per_step_mse(best, &recs, cfg.eval_rollout, cfg.window_len, Execution::Sequential)?;
                if m.windows > 0 {
                    metrics.generalization_mse = Some(m.per_step);
                }
            }
        }
    }
    metrics.runtime_s = started.elapsed().as_secs_f64();
    let state = TrainState {
        epoch: cfg.max_epochs,
        lr: optimizer.lr,
        epochs_since_improvement: scheduler.epochs_since_improvement,
        optimizer,
        scheduler,
        best_val_loss,
        best_epoch,
        best_checkpoint,
        history,
    };
    Ok(RunOutcome {
        metrics,
        state,
        final_model: model,
    })
}

/// Trains `model` on every training worm of `plan` for one fold.
pub fn train(
    model: ModelState,
    plan: &ExperimentPlan,
    cfg: &TrainConfig,
    recordings: &[WormRecording],
    fold: usize,
) -> Result<RunOutcome> {
    cfg.validate(plan.task)?;
    if fold >= cfg.fold_count {
        return Err(Error::config(format!("fold {fold} outside 0..{}", cfg.fold_count)));
    }
    let data = PreparedData::new(plan, cfg, recordings)?;
    let spec = RunSpec {
        permutation: 0,
        fold,
        train_worms: plan.train_worm_ids.clone(),
        seed: run_seed(cfg.seed, 0, fold),
    };
    train_run(model, plan.task, cfg, &data, &spec, &plan.generalization_ids())
}

/// Seed of the (permutation, fold) run under a master seed.
pub fn run_seed(master: u64, permutation: usize, fold: usize) -> u64 {
    mix_seed(&[master, permutation as u64, fold as u64])
}

/// Seed used to initialize the parameters of a run.
pub fn init_seed(run_seed: u64) -> u64 {
    mix_seed(&[run_seed, INIT_STREAM])
}
