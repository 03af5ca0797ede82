//! Large-mini-batch training mathematics: learning-rate and momentum
//! schedules, LARS, label smoothing with its cross-entropy loss, and staged
//! batch-size schedules.
//!
//! The scalar math is generic over `num_traits::Float`; the staged batch
//! schedules use `f64` epochs (an epoch is processed samples divided by
//! dataset size, so it is continuous).

mod lars;
mod lr;
mod schedule;
mod smoothing;

use thiserror::Error;

pub use lars::{lars_local_lr, lars_step, momentum_sgd_step, LarsConfig};
pub use lr::{LrConfigA, LrConfigB};
pub use schedule::{BatchPhase, BatchSchedule, LrConfigKind, IMAGENET_TRAIN_SIZE};
pub use smoothing::{smooth_labels, smoothed_cross_entropy};

#[derive(Debug, Error, PartialEq)]
pub enum LargeBatchError {
    #[error("epoch must be nonnegative, got {0}")]
    NegativeEpoch(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("smoothing epsilon must lie in [0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("total batch size must be positive")]
    NonPositiveBatch,
    #[error("epoch {epoch} is beyond the schedule, which ends at {end}")]
    EpochOutOfSchedule { epoch: f64, end: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("failed to parse schedule file: {0}")]
    ScheduleParse(String),
}
