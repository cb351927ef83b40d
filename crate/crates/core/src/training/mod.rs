//! Losses, optimizer, schedules and the permutation-by-fold
//! cross-validation harness.

mod config;
mod cv;
mod loss;
mod optim;
mod run;

pub use config::{ExperimentPlan, ExperimentTask, LossKind, TrainConfig};
pub use cv::{cross_validate, plan_cells, CrossValidation};
pub use loss::{mse_loss, nll_loss};
pub use optim::{sampling_prob, Adam, PlateauScheduler, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, PLATEAU_THRESHOLD};
pub use run::{
    init_seed, run_seed, train, train_run, validation_loss, EpochRecord, ModelTemplate, PreparedData, PreparedWorm,
    RunOutcome, RunSpec, TrainState,
};
