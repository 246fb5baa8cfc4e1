use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax over logits, negative log-likelihood in nats.
    CrossEntropy,
    /// Squared error averaged over output components.
    Mse,
    /// `Σ_c max(0, 1 - t_c·y_c)²` with `t_c = +1` for the true class and
    /// `-1` otherwise.
    L2Hinge,
}

/// One target per prediction column.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

/// Mean loss over unmasked columns of `prediction` (`outputs x N`) and its
/// gradient with respect to `prediction`. Masked columns get zero gradient.
pub fn loss(
    kind: LossKind,
    prediction: &Matrix,
    target: &Targets,
    mask: &[bool],
) -> Result<(f64, Matrix)> {
    let (c, n) = prediction.shape();
    if mask.len() != n {
        return Err(Error::dim("loss mask", (c, n), (1, mask.len())));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Degenerate("every position is masked out".into()));
    }
    let inv = 1.0 / count as f64;
    let mut grad = Matrix::zeros(c, n);
    let mut total = 0.0;

    match (kind, target) {
        (LossKind::CrossEntropy, Targets::Classes(classes))
        | (LossKind::L2Hinge, Targets::Classes(classes)) => {
            if classes.len() != n {
                return Err(Error::dim("loss targets", (c, n), (1, classes.len())));
            }
            if let Some(bad) = classes.iter().find(|k| **k >= c) {
                return Err(Error::Config(format!("class {bad} out of range for {c} outputs")));
            }
            for j in (0..n).filter(|j| mask[*j]) {
                let logits = prediction.col(j);
                let k = classes[j];
                if kind == LossKind::CrossEntropy {
                    let p = softmax(&logits);
                    total -= p[k].max(f64::MIN_POSITIVE).ln();
                    for (i, pi) in p.iter().enumerate() {
                        let onehot = if i == k { 1.0 } else { 0.0 };
                        grad.set(i, j, (pi - onehot) * inv);
                    }
                } else {
                    for (i, y) in logits.iter().enumerate() {
                        let t = if i == k { 1.0 } else { -1.0 };
                        let margin = (1.0 - t * y).max(0.0);
                        total += margin * margin;
                        grad.set(i, j, -2.0 * t * margin * inv);
                    }
                }
            }
        }
        (LossKind::Mse, Targets::Values(values)) => {
            if values.shape() != (c, n) {
                return Err(Error::dim("loss targets", (c, n), values.shape()));
            }
            for j in (0..n).filter(|j| mask[*j]) {
                for i in 0..c {
                    let diff = prediction.get(i, j) - values.get(i, j);
                    total += diff * diff / c as f64;
                    grad.set(i, j, 2.0 * diff / c as f64 * inv);
                }
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "loss {kind:?} does not accept these targets"
            )))
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::linalg::{uniform_init, Rng};

    #[test]
    fn uniform_logits_give_log_ten() {
        let (l, _) = loss(
            LossKind::CrossEntropy,
            &Matrix::zeros(10, 3),
            &Targets::Classes(vec![0, 4, 9]),
            &[true; 3],
        )
        .unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mse_zero_at_target() {
        let y = Matrix::from_rows(&[&[0.3, 1.2]]);
        let (l, g) = loss(LossKind::Mse, &y, &Targets::Values(y.clone()), &[true, true]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn hinge_zero_when_margin_met() {
        let mut y = Matrix::filled(3, 2, -1.5);
        y.set(1, 0, 1.0);
        y.set(2, 1, 2.0);
        let (l, _) = loss(LossKind::L2Hinge, &y, &Targets::Classes(vec![1, 2]), &[true, true]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn all_masked_is_degenerate() {
        let err = loss(LossKind::Mse, &Matrix::zeros(1, 2), &Targets::Values(Matrix::zeros(1, 2)), &[false, false])
            .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn masked_columns_are_ignored() {
        let mut rng = Rng::new(1);
        let y = uniform_init(&mut rng, 4, 3, 1);
        let t = Targets::Classes(vec![0, 1, 2]);
        let (l_all, _) = loss(LossKind::CrossEntropy, &y.cols_range(0, 1), &Targets::Classes(vec![0]), &[true]).unwrap();
        let (l_mask, g) = loss(LossKind::CrossEntropy, &y, &t, &[true, false, false]).unwrap();
        assert!((l_all - l_mask).abs() < 1e-15);
        assert_eq!(g.cols_range(1, 3).max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(2);
        let y = uniform_init(&mut rng, 5, 4, 2);
        let mask = [true, false, true, true];
        let cases = [
            (LossKind::CrossEntropy, Targets::Classes(vec![1, 0, 4, 2])),
            (LossKind::L2Hinge, Targets::Classes(vec![3, 3, 0, 1])),
            (LossKind::Mse, Targets::Values(uniform_init(&mut rng, 5, 4, 2))),
        ];
        for (kind, t) in cases {
            let (_, g) = loss(kind, &y, &t, &mask).unwrap();
            let report = grad_check(
                |p| Ok(loss(kind, &p[0], &t, &mask)?.0),
                std::slice::from_ref(&y),
                &[g],
                DEFAULT_STEP,
                DEFAULT_TOLERANCE,
            )
            .unwrap();
            assert!(report.passed(), "{kind:?} {report:?}");
        }
    }
}
