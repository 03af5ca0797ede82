//! Staged batch-size schedules: epoch-indexed per-worker batch and worker
//! count, with the learning-rate family that drives each stage.
//!
//! Epochs are continuous (`processed_samples / dataset_size`) and stages are
//! half-open intervals `[start, end)`. Totals are stored as the exact
//! `per_worker_batch * worker_count` products; the published figures these
//! schedules mirror round totals to the nearest K (1024).

use serde::{Deserialize, Serialize};

use super::lr::{LrConfigA, LrConfigB};
use super::LargeBatchError;

/// Number of samples in the ImageNet training set, the default dataset size.
pub const IMAGENET_TRAIN_SIZE: u64 = 1_281_167;

/// Which learning-rate family a schedule uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrConfigKind {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPhase {
    pub start_epoch: f64,
    pub end_epoch: f64,
    pub per_worker_batch: u64,
    pub worker_count: u64,
}

impl BatchPhase {
    pub fn total_batch(&self) -> u64 {
        self.per_worker_batch * self.worker_count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    #[serde(default = "default_dataset_size")]
    pub dataset_size: u64,
    pub lr_config: LrConfigKind,
    pub phases: Vec<BatchPhase>,
}

fn default_dataset_size() -> u64 {
    IMAGENET_TRAIN_SIZE
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<(), LargeBatchError> {
        let invalid = |msg: String| Err(LargeBatchError::InvalidSchedule(msg));
        if self.dataset_size == 0 {
            return invalid("dataset_size must be positive".into());
        }
        if self.phases.is_empty() {
            return invalid("schedule has no phases".into());
        }
        if self.phases[0].start_epoch != 0.0 {
            return invalid(format!(
                "first phase must start at epoch 0, starts at {}",
                self.phases[0].start_epoch
            ));
        }
        let mut prev_end = 0.0;
        for (i, phase) in self.phases.iter().enumerate() {
            if i > 0 && phase.start_epoch != prev_end {
                return invalid(format!(
                    "phase {i} starts at {} but the previous phase ends at {prev_end}",
                    phase.start_epoch
                ));
            }
            if phase.end_epoch <= phase.start_epoch || phase.end_epoch.is_nan() {
                return invalid(format!("phase {i} has a non-positive epoch span"));
            }
            if phase.per_worker_batch == 0 || phase.worker_count == 0 {
                return invalid(format!("phase {i} has a zero batch or worker count"));
            }
            prev_end = phase.end_epoch;
        }
        Ok(())
    }

    pub fn final_epoch(&self) -> f64 {
        self.phases.last().map(|p| p.end_epoch).unwrap_or(0.0)
    }

    /// The stage containing `epoch`: (per-worker batch, workers, total batch).
    pub fn batch_size_at(&self, epoch: f64) -> Result<(u64, u64, u64), LargeBatchError> {
        if epoch < 0.0 {
            return Err(LargeBatchError::NegativeEpoch(epoch));
        }
        self.phases
            .iter()
            .find(|p| epoch >= p.start_epoch && epoch < p.end_epoch)
            .map(|p| (p.per_worker_batch, p.worker_count, p.total_batch()))
            .ok_or(LargeBatchError::EpochOutOfSchedule {
                epoch,
                end: self.final_epoch(),
            })
    }

    pub fn lr_at(&self, epoch: f64) -> Result<f64, LargeBatchError> {
        match self.lr_config {
            LrConfigKind::A => LrConfigA::default().lr(epoch),
            LrConfigKind::B => LrConfigB::default().lr(epoch),
        }
    }

    /// Momentum at `epoch`. Configuration A holds it constant; configuration
    /// B recomputes it from the stage's total batch.
    pub fn momentum_at(&self, epoch: f64) -> Result<f64, LargeBatchError> {
        match self.lr_config {
            LrConfigKind::A => Ok(LrConfigA::<f64>::default().momentum),
            LrConfigKind::B => {
                let (_, _, total) = self.batch_size_at(epoch)?;
                LrConfigB::default().momentum(epoch, total as f64, self.dataset_size as f64)
            }
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LargeBatchError> {
        let schedule: BatchSchedule =
            toml::from_str(text).map_err(|e| LargeBatchError::ScheduleParse(e.to_string()))?;
        schedule.validate()?;
        Ok(schedule)
    }

    fn staged(lr_config: LrConfigKind, stages: &[(f64, f64, u64, u64)]) -> Self {
        let schedule = BatchSchedule {
            dataset_size: IMAGENET_TRAIN_SIZE,
            lr_config,
            phases: stages
                .iter()
                .map(
                    |&(start_epoch, end_epoch, per_worker_batch, worker_count)| BatchPhase {
                        start_epoch,
                        end_epoch,
                        per_worker_batch,
                        worker_count,
                    },
                )
                .collect(),
        };
        schedule.validate().expect("built-in schedule is valid");
        schedule
    }

    /// Constant 32K total batch (32 per worker on 1024 workers), 90 epochs.
    pub fn reference() -> Self {
        Self::staged(LrConfigKind::B, &[(0.0, 90.0, 32, 1024)])
    }

    /// 34K -> 68K total batch at epoch 30, configuration A.
    pub fn exp1() -> Self {
        Self::staged(
            LrConfigKind::A,
            &[(0.0, 30.0, 16, 2176), (30.0, 90.0, 32, 2176)],
        )
    }

    /// Constant ~54K total batch; workers halve when the per-worker batch
    /// doubles at epoch 30. Configuration B.
    pub fn exp2() -> Self {
        Self::staged(
            LrConfigKind::B,
            &[(0.0, 30.0, 16, 3456), (30.0, 90.0, 32, 1728)],
        )
    }

    /// ~54K -> 64K total batch at epoch 30, configuration B.
    pub fn exp3() -> Self {
        Self::staged(
            LrConfigKind::B,
            &[(0.0, 30.0, 16, 3456), (30.0, 90.0, 32, 2048)],
        )
    }

    /// Four stages climbing from ~34K to ~119K total batch, configuration A.
    pub fn exp4() -> Self {
        Self::staged(
            LrConfigKind::A,
            &[
                (0.0, 30.0, 16, 2176),
                (30.0, 45.0, 16, 4352),
                (45.0, 75.0, 32, 2720),
                (75.0, 90.0, 32, 3808),
            ],
        )
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "reference" => Some(Self::reference()),
            "exp1" => Some(Self::exp1()),
            "exp2" => Some(Self::exp2()),
            "exp3" => Some(Self::exp3()),
            "exp4" => Some(Self::exp4()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 5] = ["reference", "exp1", "exp2", "exp3", "exp4"];
}
