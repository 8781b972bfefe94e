//! Smoothed labels and the matching loss.

use ndarray::{Array1, ArrayView1};

use super::MatchError;

/// `y_t = α^(−|t − t_gt|)`.
pub fn smoothed_labels(t: usize, t_gt: usize, alpha: f64) -> Result<Array1<f64>, MatchError> {
    if !(alpha > 1.0) || t_gt >= t {
        return Err(MatchError::BadProblem(format!(
            "alpha {alpha} must exceed 1 and t_gt {t_gt} must be below T = {t}"
        )));
    }
    Ok(Array1::from_shape_fn(t, |i| {
        alpha.powi(-(i.abs_diff(t_gt) as i32))
    }))
}

/// How similarities become the probabilities inside the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `p = softmax(s)`.
    #[default]
    Softmax,
    /// `p_t = clamp((s_t + 1)/2, ε, 1)`.
    ShiftedCosine,
}

const SHIFT_FLOOR: f64 = 1e-12;

/// `−(1/T) Σ y_t · log p_t`.
pub fn matching_loss(
    s: ArrayView1<f64>,
    y: ArrayView1<f64>,
    kind: LossKind,
) -> Result<f64, MatchError> {
    Ok(loss_and_grad(s, y, kind)?.0)
}

fn log_softmax(s: ArrayView1<f64>) -> Array1<f64> {
    let m = s.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = m + s.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    s.mapv(|x| x - lse)
}

/// Loss and dL/ds.
pub fn loss_and_grad(
    s: ArrayView1<f64>,
    y: ArrayView1<f64>,
    kind: LossKind,
) -> Result<(f64, Array1<f64>), MatchError> {
    let t = s.len();
    if t == 0 || y.len() != t {
        return Err(MatchError::ShapeMismatch(format!(
            "{t} similarities and {} labels",
            y.len()
        )));
    }
    let tf = t as f64;
    match kind {
        LossKind::Softmax => {
            let lp = log_softmax(s);
            let loss = -y.iter().zip(lp.iter()).map(|(a, b)| a * b).sum::<f64>() / tf;
            let ysum = y.sum();
            let grad = Array1::from_shape_fn(t, |i| -(y[i] - lp[i].exp() * ysum) / tf);
            Ok((loss, grad))
        }
        LossKind::ShiftedCosine => {
            let mut loss = 0.0;
            let mut grad = Array1::zeros(t);
            for i in 0..t {
                let raw = (s[i] + 1.0) / 2.0;
                let p = raw.clamp(SHIFT_FLOOR, 1.0);
                loss -= y[i] * p.ln();
                if raw > SHIFT_FLOOR && raw < 1.0 {
                    grad[i] = -y[i] / (2.0 * p * tf);
                }
            }
            Ok((loss / tf, grad))
        }
    }
}
