//! Label smoothing and the smoothed softmax cross-entropy loss.

use num_traits::{Float, FromPrimitive};

use super::LargeBatchError;

/// Smoothed target distribution: `(1 - eps)` on the true class plus a uniform
/// `eps / K` everywhere. Always sums to one.
pub fn smooth_labels<F: Float + FromPrimitive>(
    true_label: usize,
    epsilon: F,
    num_classes: usize,
) -> Result<Vec<F>, LargeBatchError> {
    if true_label >= num_classes {
        return Err(LargeBatchError::LabelOutOfRange {
            label: true_label,
            classes: num_classes,
        });
    }
    if epsilon < F::zero() || epsilon > F::one() {
        return Err(LargeBatchError::InvalidEpsilon(
            epsilon.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let k = F::from_usize(num_classes).expect("class count representable");
    let floor = epsilon / k;
    let mut q = vec![floor; num_classes];
    q[true_label] = q[true_label] + (F::one() - epsilon);
    Ok(q)
}

/// Cross-entropy of a target distribution against softmax(logits):
/// `loss = -sum_k q[k] * log softmax(logits)[k]`, with the gradient
/// `softmax(logits) - q` w.r.t. the logits.
pub fn smoothed_cross_entropy<F: Float>(
    logits: &[F],
    target: &[F],
) -> Result<(F, Vec<F>), LargeBatchError> {
    if logits.is_empty() || logits.len() != target.len() {
        return Err(LargeBatchError::LengthMismatch {
            expected: logits.len(),
            got: target.len(),
        });
    }
    // Stabilized log-sum-exp.
    let max = logits.iter().cloned().fold(logits[0], F::max);
    let mut denom = F::zero();
    for &l in logits {
        denom = denom + (l - max).exp();
    }
    let lse = max + denom.ln();
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &q) in logits.iter().zip(target) {
        loss = loss + q * (lse - l);
        grad.push((l - max).exp() / denom - q);
    }
    Ok((loss, grad))
}
