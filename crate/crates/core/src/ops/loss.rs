//! Softmax cross-entropy with an ignore sentinel.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::ops::{lit, Scalar};

/// Mean negative log-likelihood over rows whose label is not `ignore_label`.
///
/// Returns the loss and its gradient with respect to the logits, already
/// divided by the number of counted rows. Stabilized by max subtraction.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &ArrayView2<S>,
    labels: &[i32],
    ignore_label: i32,
) -> Result<(S, Array2<S>)> {
    let (n, k) = (logits.nrows(), logits.ncols());
    if labels.len() != n {
        return Err(Error::validation(format!(
            "loss: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let counted = labels.iter().filter(|&&l| l != ignore_label).count();
    if counted == 0 {
        return Err(Error::validation("loss: every row is ignored"));
    }
    let inv_count = lit::<S>(1.0 / counted as f64);

    let mut grad = Array2::zeros((n, k));
    let mut loss = S::zero();
    for (r, row) in logits.outer_iter().enumerate() {
        let label = labels[r];
        if label == ignore_label {
            continue;
        }
        if label < 0 || label as usize >= k {
            return Err(Error::validation(format!(
                "loss: label {label} outside [0, {k}) at row {r}"
            )));
        }
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln();
        loss -= (row[label as usize] - max) - log_sum;
        for j in 0..k {
            let softmax = (row[j] - max).exp() / sum;
            let onehot = if j == label as usize { S::one() } else { S::zero() };
            grad[[r, j]] = (softmax - onehot) * inv_count;
        }
    }
    Ok((loss * inv_count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 4, 7] {
            let logits = Array2::<f64>::zeros((3, k));
            let labels = vec![0, 1, (k - 1) as i32];
            let (loss, _) = softmax_cross_entropy(&logits.view(), &labels, -1).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Array2::<f64>::zeros((1, 4));
        logits[[0, 2]] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits.view(), &[2], -1).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn ignored_rows_do_not_contribute() {
        let mut logits = Array2::<f64>::zeros((2, 3));
        logits[[1, 0]] = 100.0; // ignored row, would dominate otherwise
        let (loss, grad) = softmax_cross_entropy(&logits.view(), &[1, -1], -1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn all_ignored_is_error() {
        let logits = Array2::<f64>::zeros((2, 3));
        assert!(softmax_cross_entropy(&logits.view(), &[-1, -1], -1).is_err());
    }

    #[test]
    fn out_of_range_label_is_error() {
        let logits = Array2::<f64>::zeros((1, 3));
        assert!(softmax_cross_entropy(&logits.view(), &[3], -1).is_err());
    }
}
