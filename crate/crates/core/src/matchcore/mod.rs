//! Timestamp prediction as embedding matching: frame compression, projection
//! into an alignment space, cosine matching and the smoothed matching loss.

mod aggregate;
mod grad;
mod heads;
mod loss;
mod train;

pub use aggregate::{aggregate_frame, AggregatorParams};
pub use grad::{
    grad_check, problem_loss, problem_loss_and_grad, Coord, HeadGrads, ProblemGrads, REL_FLOOR,
};
pub use heads::{
    project_align, Activation, AlignmentHeads, Linear, LinearGrad, Mlp, HIDDEN_SIZE, OUTPUT_SIZE,
};
pub use loss::{loss_and_grad, matching_loss, smoothed_labels, LossKind};
pub use train::{toy_train, ToyConfig, TrainStep, TrainTrace};

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid problem: {0}")]
    BadProblem(String),
}

/// One `<vid>` hidden state against T frame hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchProblem {
    pub h_vid: Array2<f64>,
    pub h_frm: Array2<f64>,
    pub t_gt: usize,
    pub alpha: f64,
    pub frame_rate: f64,
}

impl MatchProblem {
    pub fn new(
        h_vid: Array2<f64>,
        h_frm: Array2<f64>,
        t_gt: usize,
        alpha: f64,
        frame_rate: f64,
    ) -> Result<Self, MatchError> {
        if h_vid.nrows() != 1 || h_vid.ncols() != h_frm.ncols() {
            return Err(MatchError::ShapeMismatch(format!(
                "h_vid {:?} vs h_frm {:?}",
                h_vid.dim(),
                h_frm.dim()
            )));
        }
        if t_gt >= h_frm.nrows() || !(alpha > 1.0) || !(frame_rate > 0.0) {
            return Err(MatchError::BadProblem(format!(
                "t_gt {t_gt} of T = {}, alpha {alpha}, rate {frame_rate}",
                h_frm.nrows()
            )));
        }
        Ok(MatchProblem {
            h_vid,
            h_frm,
            t_gt,
            alpha,
            frame_rate,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.h_frm.nrows()
    }

    pub fn labels(&self) -> Array1<f64> {
        smoothed_labels(self.num_frames(), self.t_gt, self.alpha).expect("validated problem")
    }
}

pub(crate) fn norm(v: ndarray::ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity of `g_vid` with each frame row and the argmax
/// (ties to the lowest index). Zero rows score 0.
pub fn match_frames(
    g_vid: ArrayView2<f64>,
    g_frm: ArrayView2<f64>,
) -> Result<(Array1<f64>, usize), MatchError> {
    if g_vid.nrows() != 1 || g_vid.ncols() != g_frm.ncols() || g_frm.nrows() == 0 {
        return Err(MatchError::ShapeMismatch(format!(
            "g_vid {:?} vs g_frm {:?}",
            g_vid.dim(),
            g_frm.dim()
        )));
    }
    let v = g_vid.row(0);
    let nv = norm(v);
    if nv == 0.0 {
        return Err(MatchError::DegenerateInput("g_vid is all zeros".into()));
    }
    let s = Array1::from_iter(g_frm.rows().into_iter().map(|f| {
        let nf = norm(f);
        if nf == 0.0 {
            0.0
        } else {
            v.dot(&f) / (nv * nf)
        }
    }));
    let mut best = 0;
    for (i, &x) in s.iter().enumerate() {
        if x > s[best] {
            best = i;
        }
    }
    Ok((s, best))
}

/// Frame index to seconds under uniform sampling at `frame_rate` frames/s.
pub fn to_timestamp(t_match: usize, frame_rate: f64) -> f64 {
    t_match as f64 / frame_rate
}
