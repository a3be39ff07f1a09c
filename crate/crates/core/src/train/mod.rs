//! Optimiser, learning-rate schedule, metrics and the training loop.

pub mod adam;
mod config;
mod metrics;
mod schedule;
mod spe;
pub mod task;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use config::TrainConfig;
pub use metrics::{EvalRecord, RunMetrics, CSV_HEADER};
pub use schedule::plateau_schedule;
pub use spe::{same_performance_epoch, SpeReport};
pub use task::{listops_task, regime_floor, regime_task, Batch, Example, TaskData};
pub use trainer::{TrainOutcome, Trainer};
