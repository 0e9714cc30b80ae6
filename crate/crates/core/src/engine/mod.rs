//! Experiment configuration and the phase-by-phase learning loop.

mod config;
mod experiment;
mod phase;
mod train;

pub use config::{
    AblationConfig, Classifier, DataConfig, ExperimentConfig, KdMode, MemoryConfig, ModelConfig,
    PlaceboConfig, PolicyConfig, PolicyMode, SnapshotMode, TrainingConfig,
};
pub use experiment::{
    ablation_cells, load_task, phases_csv, run_experiment, run_on_task, summarize, AblationCell,
    RunOutput, RunReport, Task,
};
pub use phase::{
    learn_policy_for_phase, run_phase, AuditSummary, LearnerState, PhaseInputs, PhaseReport,
    PhaseTraces, RolloutEvaluator, StreamHandle,
};
pub use train::{
    class_means, evaluate_accuracy, nme_accuracy, train_with_action, Accuracy, KdSource, RunContext, RunData, TrainOutcome,
};
