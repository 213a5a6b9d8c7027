//! Time discretization, kernel-weighted leave-one-out losses and the
//! minibatch training loop for the embedding network.

mod discretize;
pub mod loss;
mod trainer;

pub use discretize::{discretize_times, DiscreteTimeMap, MAX_TIME_STEPS};
pub(crate) use trainer::{batch_bounds, criterion_from_hazards, OptimizerState};
pub use trainer::{
    eval_grid_for, train_embedding, validation_criterion, EarlyStopCriterion, EpochRecord,
    Optimizer, TrainConfig, TrainingLog,
};
