//! Scenario masks, optimization, the training loop and the evaluation
//! driver.

mod eval;
mod optim;
mod scenario;
mod train;

pub use eval::{
    complete_one, evaluate, evaluate_all, map_jobs, score, EvalOptions, EvalReport, EvalRow, Interpolation, Predictor,
    SequenceMetrics, ZeroVelocity,
};
pub use optim::{adam_step, clip_grad_norm, lr_schedule, AdamConfig, AdamState, DecayMode};
pub use scenario::{make_mask, Scenario, ScenarioKind, ScenarioSpec, CONTEXT_FRAMES};
pub use train::{train, EpochLog, EvalSummary, RunConfig, TrainConfig, TrainOutcome, FEATURE_STD_FLOOR};
