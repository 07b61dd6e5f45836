//! Training loop, checkpoints and evaluation.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, SCHEMA_VERSION};
pub use config::{lr_schedule, DataConfig, DecayUnit, OptimizerConfig, RunConfig, ScheduleConfig, TrainMode};
pub use eval::{evaluate, evaluate_samples, EvalOptions, MaskScorer, ModelScorer, OracleScorer};
pub use train::{make_batch, train, train_on, Batch, Dataset, LogEntry, RunLock, StepRecord, TrainLog, TrainOutcome, Trainer};
