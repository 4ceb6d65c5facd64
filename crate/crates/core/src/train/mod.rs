//! Continual training: optimizers, task datasets and the task-incremental protocol.

pub mod data;
pub mod optim;
pub mod trainer;

pub use data::{check_disjoint, Split, TaskDataset};
pub use optim::{Adam, MilestoneSchedule, Sgd};
pub use trainer::{
    evaluate_split, evaluate_task, no_forgetting_audit, run_sequence, train_adapter_task, train_base_task, RunReport,
    SequenceOptions, SequenceRun, TaskReport, TaskState, TrainConfig, TrainLog, Variant,
};
