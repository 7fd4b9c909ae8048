//! Loss functions returning `(loss, ∂loss/∂input)`.

use super::NumoptError;

/// Logistic sigmoid, evaluated without overflow for large |s|.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))` via the branch-stable `max(s,0) + log1p(exp(-|s|))`.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

fn check_len(a: usize, b: usize) -> Result<(), NumoptError> {
    if a != b {
        return Err(NumoptError::LengthMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Mean binary cross-entropy of sigmoid outputs against 0/1 targets.
///
/// Per attribute, `-t·log σ(s) - (1-t)·log(1-σ(s)) = softplus(s) - t·s`.
pub fn sigmoid_ce_loss(scores: &[f64], targets: &[bool]) -> Result<(f64, Vec<f64>), NumoptError> {
    check_len(scores.len(), targets.len())?;
    let n = scores.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let t = if t { 1.0 } else { 0.0 };
            loss += softplus(s) - t * s;
            (sigmoid(s) - t) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Quadratically smoothed hinge on a signed margin `m`, with its derivative.
///
/// Zero for `m >= 1`, `(1-m)²/(2γ)` on `(1-γ, 1)`, linear `1 - m - γ/2` below.
pub fn smoothed_hinge(m: f64, gamma: f64) -> (f64, f64) {
    if m >= 1.0 {
        (0.0, 0.0)
    } else if m > 1.0 - gamma {
        let d = 1.0 - m;
        (d * d / (2.0 * gamma), -d / gamma)
    } else {
        (1.0 - m - gamma / 2.0, -1.0)
    }
}

/// Mean over attributes of the smoothed hinge on `(2t-1)·s`.
pub fn smoothed_multilabel_hinge(
    scores: &[f64],
    targets: &[bool],
    gamma: f64,
) -> Result<(f64, Vec<f64>), NumoptError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(NumoptError::NonPositiveGamma(gamma));
    }
    check_len(scores.len(), targets.len())?;
    let n = scores.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let sign = if t { 1.0 } else { -1.0 };
            let (l, dl) = smoothed_hinge(sign * s, gamma);
            loss += l;
            dl * sign / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// `½·Σ (pred - target)²`.
pub fn euclidean_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NumoptError> {
    check_len(pred.len(), target.len())?;
    let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ce_closed_forms() {
        let (l, g) = sigmoid_ce_loss(&[0.0], &[true]).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-12);

        let (l, g) = sigmoid_ce_loss(&[50.0], &[true]).unwrap();
        assert!(l < 1e-20 && g[0].abs() < 1e-20);

        // no overflow far in the tails
        let (l, _) = sigmoid_ce_loss(&[-800.0, 800.0], &[true, false]).unwrap();
        assert_abs_diff_eq!(l, 800.0, epsilon = 1e-9);
    }

    #[test]
    fn hinge_closed_forms() {
        let (l, g) = smoothed_multilabel_hinge(&[2.0], &[true], 1.0).unwrap();
        assert_eq!((l, g[0]), (0.0, 0.0));
        let (l, _) = smoothed_multilabel_hinge(&[-2.0], &[false], 1.0).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = smoothed_multilabel_hinge(&[0.0], &[true], 1.0).unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-15);
        assert!(matches!(
            smoothed_multilabel_hinge(&[0.0], &[true], 0.0),
            Err(NumoptError::NonPositiveGamma(_))
        ));
        assert!(matches!(
            smoothed_multilabel_hinge(&[0.0], &[true, false], 1.0),
            Err(NumoptError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hinge_is_c1_at_the_knots() {
        for gamma in [0.25, 1.0, 3.0] {
            for knot in [1.0, 1.0 - gamma] {
                let eps = 1e-9;
                let (l_lo, d_lo) = smoothed_hinge(knot - eps, gamma);
                let (l_hi, d_hi) = smoothed_hinge(knot + eps, gamma);
                assert!((l_lo - l_hi).abs() < 1e-8);
                assert!((d_lo - d_hi).abs() < 1e-8, "derivative jump at {knot}");
            }
        }
    }

    #[test]
    fn euclidean_closed_forms() {
        let (l, g) = euclidean_loss(&[3.0], &[1.0]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![2.0]);
        let (l, _) = euclidean_loss(&[0.3, 1.2], &[0.3, 1.2]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(-40.0), (-40.0f64).exp(), epsilon = 1e-25);
    }
}
