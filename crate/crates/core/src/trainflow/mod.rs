//! Pretraining, the RL loop, evaluation and checkpoint selection.

pub mod eval;
pub mod optim;
pub mod pretrain;
pub mod seed;
pub mod train;

pub use eval::{evaluate, plurality, truncated_len, EvalConfig, EvalMetrics};
pub use optim::{AdamState, OptimConfig};
pub use pretrain::{pretrain_mle, pretrain_mle_traced};
pub use seed::derive_seed;
pub use train::{
    batch_gradient, collect_groups, resume_regime, select_checkpoint, select_row, train_regime, Checkpoint,
    CheckpointRef, Criterion, MetricsRow, RunRecord, TrainJob, METRICS_HEADER,
};
