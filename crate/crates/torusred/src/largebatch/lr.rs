//! Learning-rate, noise-scale, and momentum schedules.

use num_traits::{Float, FromPrimitive};

use super::LargeBatchError;

fn c<F: Float + FromPrimitive>(v: f64) -> F {
    F::from_f64(v).expect("schedule constant representable")
}

fn check_epoch<F: Float>(epoch: F) -> Result<(), LargeBatchError> {
    if epoch < F::zero() {
        return Err(LargeBatchError::NegativeEpoch(
            epoch.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(())
}

/// Configuration B: linear warmup from 0.2, then two quadratic decay branches
/// that both reach zero at `decay_end_epoch`. The base learning rate switches
/// from 29 to 50 at `switch_epoch`, producing an upward jump there (and a
/// downward one where warmup hands over to decay) — the branches are applied
/// exactly as configured, discontinuities included.
///
/// Momentum follows the constant-noise-scale relation: the noise scale
/// `lr * (dataset / reference_batch) / (1 - reference_momentum)` is what the
/// reference configuration (batch 32768, momentum 0.9) realizes, and momentum
/// at another total batch is chosen to keep it, which collapses to
/// `1 - (1 - reference_momentum) * reference_batch / total_batch` once the
/// learning-rate and dataset factors cancel.
#[derive(Clone, Copy, Debug)]
pub struct LrConfigB<F> {
    pub warmup_epochs: F,
    pub lr_start: F,
    pub base_lr_early: F,
    pub base_lr_late: F,
    pub switch_epoch: F,
    pub decay_end_epoch: F,
    pub reference_batch: F,
    pub reference_momentum: F,
}

impl<F: Float + FromPrimitive> Default for LrConfigB<F> {
    fn default() -> Self {
        LrConfigB {
            warmup_epochs: c(5.0),
            lr_start: c(0.2),
            base_lr_early: c(29.0),
            base_lr_late: c(50.0),
            switch_epoch: c(30.0),
            decay_end_epoch: c(90.0),
            reference_batch: c(32768.0),
            reference_momentum: c(0.9),
        }
    }
}

impl<F: Float + FromPrimitive> LrConfigB<F> {
    pub fn lr(&self, epoch: F) -> Result<F, LargeBatchError> {
        check_epoch(epoch)?;
        if epoch < self.warmup_epochs {
            return Ok(
                self.lr_start + (self.base_lr_early - self.lr_start) * epoch / self.warmup_epochs
            );
        }
        if epoch >= self.decay_end_epoch {
            return Ok(F::zero());
        }
        let base = if epoch < self.switch_epoch {
            self.base_lr_early
        } else {
            self.base_lr_late
        };
        let frac = F::one() - epoch / self.decay_end_epoch;
        Ok(base * frac * frac)
    }

    /// `lr(epoch) * (dataset_size / reference_batch) / (1 - reference_momentum)`.
    pub fn noise_scale(&self, epoch: F, dataset_size: F) -> Result<F, LargeBatchError> {
        let lr = self.lr(epoch)?;
        Ok(lr * (dataset_size / self.reference_batch) / (F::one() - self.reference_momentum))
    }

    /// Momentum holding the noise scale constant at `total_batch`:
    /// `1 - lr * (dataset / total_batch) / noise_scale(epoch, dataset)`.
    /// Both the learning-rate and dataset factors cancel algebraically, so
    /// the cancelled form is evaluated directly; it is also the correct limit
    /// where the decayed learning rate reaches zero and the ratio form
    /// becomes 0/0. Clamped to `[0, 1)`.
    pub fn momentum(
        &self,
        epoch: F,
        total_batch: F,
        _dataset_size: F,
    ) -> Result<F, LargeBatchError> {
        check_epoch(epoch)?;
        if total_batch <= F::zero() {
            return Err(LargeBatchError::NonPositiveBatch);
        }
        let m =
            F::one() - (F::one() - self.reference_momentum) * self.reference_batch / total_batch;
        Ok(m.max(F::zero()))
    }
}

/// Configuration A: linear warmup from `initial_lr` to `base_lr` over
/// `warmup_epochs`, then polynomial decay to zero at `decay_end_epoch`.
/// Momentum is constant.
#[derive(Clone, Copy, Debug)]
pub struct LrConfigA<F> {
    pub warmup_epochs: F,
    pub base_lr: F,
    pub initial_lr: F,
    pub momentum: F,
    pub decay_end_epoch: F,
    pub decay_power: i32,
}

impl<F: Float + FromPrimitive> Default for LrConfigA<F> {
    fn default() -> Self {
        LrConfigA {
            warmup_epochs: c(34.0),
            base_lr: c(34.0),
            initial_lr: c(1e-5),
            momentum: c(0.9),
            decay_end_epoch: c(90.0),
            decay_power: 2,
        }
    }
}

impl<F: Float + FromPrimitive> LrConfigA<F> {
    pub fn lr(&self, epoch: F) -> Result<F, LargeBatchError> {
        check_epoch(epoch)?;
        if epoch < self.warmup_epochs {
            return Ok(
                self.initial_lr + (self.base_lr - self.initial_lr) * epoch / self.warmup_epochs
            );
        }
        if epoch >= self.decay_end_epoch {
            return Ok(F::zero());
        }
        let frac =
            F::one() - (epoch - self.warmup_epochs) / (self.decay_end_epoch - self.warmup_epochs);
        Ok(self.base_lr * frac.powi(self.decay_power))
    }
}
