use std::collections::BTreeMap;

use super::config::{ExperimentPlan, TrainConfig};
use super::run::{init_seed, run_seed, train_run, ModelTemplate, PreparedData, RunSpec};
use crate::data::{worm_permutations, WormRecording};
use crate::error::{Error, Result};
use crate::evaluation::{summarize, MetricsSummary, RunMetrics};
use crate::parallel::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    /// One record per (permutation, fold), sorted by that pair.
    pub runs: Vec<RunMetrics>,
    pub summary: MetricsSummary,
}

/// Every (permutation, fold) cell of `plan`, in sorted order.
pub fn plan_cells(plan: &ExperimentPlan, cfg: &TrainConfig) -> Result<Vec<RunSpec>> {
    plan.validate()?;
    let perms = worm_permutations(&plan.train_worm_ids, plan.permutation_size)?;
    let mut cells = Vec::with_capacity(perms.len() * cfg.fold_count);
    for (p, worms) in perms.into_iter().enumerate() {
        for fold in 0..cfg.fold_count {
            cells.push(RunSpec {
                permutation: p,
                fold,
                train_worms: worms.clone(),
                seed: run_seed(cfg.seed, p, fold),
            });
        }
    }
    Ok(cells)
}

/// Trains every cell of `plan` (skipping those already in `completed`),
/// reporting each fresh run through `on_run`, and aggregates all runs.
pub fn cross_validate<F>(
    template: &ModelTemplate,
    plan: &ExperimentPlan,
    cfg: &TrainConfig,
    recordings: &[WormRecording],
    execution: Execution,
    completed: &[RunMetrics],
    on_run: F,
) -> Result<CrossValidation>
where
    F: Fn(&RunMetrics) -> Result<()> + Sync + Send,
{
    cfg.validate(plan.task)?;
    let data = PreparedData::new(plan, cfg, recordings)?;
    let cells = plan_cells(plan, cfg)?;
    let done: BTreeMap<(usize, usize), &RunMetrics> =
        completed.iter().map(|r| ((r.permutation, r.fold), r)).collect();
    let generalization = plan.generalization_ids();
    let results = execution.map(&cells, |_, spec| -> Result<RunMetrics> {
        if let Some(r) = done.get(&(spec.permutation, spec.fold)) {
            if r.seed != spec.seed || r.train_worms != spec.train_worms {
                return Err(Error::config(format!(
                    "completed run (permutation {}, fold {}) does not match this plan",
                    spec.permutation, spec.fold
                )));
            }
            return Ok((*r).clone());
        }
        let model = template.instantiate(init_seed(spec.seed))?;
        let outcome = train_run(model, plan.task, cfg, &data, spec, &generalization)?;
        on_run(&outcome.metrics)?;
        Ok(outcome.metrics)
    })?;
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(CrossValidation { runs, summary })
}
