//! Dual binary cross-entropy loss over the add and remove predictions.

use super::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-7;

/// Loss value plus gradients with respect to each (clamped) prediction.
#[derive(Debug, Clone)]
pub struct DualBceResult<T> {
    pub loss: T,
    pub grad_add: Vec<T>,
    pub grad_remove: Vec<T>,
}

fn bce_term<T: Scalar>(pred: &[T], truth: &[u8]) -> (T, Vec<T>) {
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::from_f64(1.0 - PROB_CLAMP);
    let count = T::from_f64(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(truth) {
        let p = p.max(lo).min(hi);
        let y = T::from_f64(y as f64);
        loss -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
        grad.push((p - y) / (p * (T::one() - p)) / count);
    }
    (loss / count, grad)
}

/// Sum of the mean BCE over the add predictions and the mean BCE over the
/// remove predictions. Predictions are clamped to `[1e-7, 1-1e-7]`; the
/// gradients use the clamped values consistently.
pub fn bce_dual_loss<T: Scalar>(
    add_pred: &[T],
    add_true: &[u8],
    remove_pred: &[T],
    remove_true: &[u8],
) -> DualBceResult<T> {
    assert_eq!(
        add_pred.len(),
        add_true.len(),
        "add prediction/truth length mismatch"
    );
    assert_eq!(
        remove_pred.len(),
        remove_true.len(),
        "remove prediction/truth length mismatch"
    );
    let (add_loss, grad_add) = bce_term(add_pred, add_true);
    let (remove_loss, grad_remove) = bce_term(remove_pred, remove_true);
    DualBceResult {
        loss: add_loss + remove_loss,
        grad_add,
        grad_remove,
    }
}
