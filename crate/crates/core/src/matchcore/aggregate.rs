//! Query-driven compression of a frame's patch tokens into one token.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::MatchError;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

impl AggregatorParams {
    pub fn identity(c: usize) -> Self {
        AggregatorParams {
            w_q: Array2::eye(c),
            w_k: Array2::eye(c),
        }
    }
}

/// Row-wise softmax, shifted by the row max.
pub(crate) fn softmax_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    a
}

/// `P` is K × C patch features, `Q` is M × C queries. Scores are
/// `(Q·w_q)(P·w_k)ᵀ/√C` (M × K), softmaxed over patches; the result is the
/// mean over the M rows of `a·P + Q`.
pub fn aggregate_frame(
    p: ArrayView2<f64>,
    q: ArrayView2<f64>,
    params: &AggregatorParams,
) -> Result<Array1<f64>, MatchError> {
    let (k, c) = p.dim();
    let (m, cq) = q.dim();
    if k == 0 || m == 0 || c == 0 || cq != c {
        return Err(MatchError::ShapeMismatch(format!(
            "patches {k}×{c}, queries {m}×{cq}"
        )));
    }
    if params.w_q.dim() != (c, c) || params.w_k.dim() != (c, c) {
        return Err(MatchError::ShapeMismatch(format!(
            "projections {:?} and {:?} for C = {c}",
            params.w_q.dim(),
            params.w_k.dim()
        )));
    }
    let qp = q.dot(&params.w_q);
    let kp = p.dot(&params.w_k);
    let scores = qp.dot(&kp.t()) / (c as f64).sqrt();
    let a = softmax_rows(scores);
    let out = a.dot(&p) + q;
    Ok(out.mean_axis(Axis(0)).expect("m ≥ 1"))
}
