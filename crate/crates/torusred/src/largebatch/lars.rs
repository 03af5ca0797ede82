//! Layer-wise adaptive rate scaling and the plain momentum-SGD step it
//! specializes.

use num_traits::{Float, FromPrimitive};

use super::LargeBatchError;

/// LARS hyperparameters. Weight decay enters both the trust-ratio denominator
/// and the effective gradient.
#[derive(Clone, Copy, Debug)]
pub struct LarsConfig<F> {
    pub coefficient: F,
    pub eps: F,
    pub weight_decay: F,
}

impl<F: Float + FromPrimitive> Default for LarsConfig<F> {
    fn default() -> Self {
        LarsConfig {
            coefficient: F::from_f64(0.01).unwrap(),
            eps: F::from_f64(1e-6).unwrap(),
            weight_decay: F::zero(),
        }
    }
}

fn l2_norm<F: Float>(values: &[F]) -> F {
    values.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Per-layer trust ratio:
/// `coefficient * ||w|| / (||g|| + weight_decay * ||w|| + eps)`.
/// Falls back to 1.0 when either norm is zero, so freshly-initialized or
/// gradient-free layers still move.
pub fn lars_local_lr<F: Float>(weights_norm: F, grad_norm: F, cfg: &LarsConfig<F>) -> F {
    if weights_norm == F::zero() || grad_norm == F::zero() {
        return F::one();
    }
    cfg.coefficient * weights_norm / (grad_norm + cfg.weight_decay * weights_norm + cfg.eps)
}

fn check_shapes<F>(weights: &[F], grads: &[F], velocity: &[F]) -> Result<(), LargeBatchError> {
    if grads.len() != weights.len() {
        return Err(LargeBatchError::LengthMismatch {
            expected: weights.len(),
            got: grads.len(),
        });
    }
    if velocity.len() != weights.len() {
        return Err(LargeBatchError::LengthMismatch {
            expected: weights.len(),
            got: velocity.len(),
        });
    }
    Ok(())
}

/// One LARS update for a single layer:
/// `g' = g + wd * w`, `v <- momentum * v + global_lr * lambda * g'`,
/// `w <- w - v`, with `lambda` the trust ratio over the raw norms.
pub fn lars_step<F: Float>(
    weights: &mut [F],
    grads: &[F],
    velocity: &mut [F],
    global_lr: F,
    momentum: F,
    cfg: &LarsConfig<F>,
) -> Result<(), LargeBatchError> {
    check_shapes(weights, grads, velocity)?;
    let trust = lars_local_lr(l2_norm(weights), l2_norm(grads), cfg);
    let scale = global_lr * trust;
    for i in 0..weights.len() {
        let effective = grads[i] + cfg.weight_decay * weights[i];
        velocity[i] = momentum * velocity[i] + scale * effective;
        weights[i] = weights[i] - velocity[i];
    }
    Ok(())
}

/// Plain momentum SGD with coupled weight decay (the LARS recurrence with the
/// trust ratio pinned to one).
pub fn momentum_sgd_step<F: Float>(
    weights: &mut [F],
    grads: &[F],
    velocity: &mut [F],
    global_lr: F,
    momentum: F,
    weight_decay: F,
) -> Result<(), LargeBatchError> {
    check_shapes(weights, grads, velocity)?;
    for i in 0..weights.len() {
        let effective = grads[i] + weight_decay * weights[i];
        velocity[i] = momentum * velocity[i] + global_lr * effective;
        weights[i] = weights[i] - velocity[i];
    }
    Ok(())
}
