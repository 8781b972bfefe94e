//! Per-sample scoring rules: temporal IoU, thresholded grounding F1, clip-level
//! summarization F1, highlight hits, event-matching and grounded-QA recall.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{OptionLetter, TimeInterval};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("IoU thresholds must be strictly increasing values in (0, 1), got {0:?}")]
    BadThresholds(Vec<f64>),
    #[error("clip grid needs positive clip length and duration (clip {clip_length}, duration {duration})")]
    BadGrid { clip_length: f64, duration: f64 },
}

/// Temporal IoU. Two zero-length intervals at the same instant have IoU 1.
pub fn iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        return if a.start() == b.start() && a.end() == b.end() {
            1.0
        } else {
            0.0
        };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUThresholds(Vec<f64>);

impl IoUThresholds {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        let in_range = values.iter().all(|&t| t > 0.0 && t < 1.0);
        let increasing = values.windows(2).all(|w| w[0] < w[1]);
        if values.is_empty() || !in_range || !increasing {
            return Err(MetricsError::BadThresholds(values));
        }
        Ok(IoUThresholds(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for IoUThresholds {
    fn default() -> Self {
        IoUThresholds(vec![0.1, 0.3, 0.5, 0.7])
    }
}

/// Per-threshold scores, aligned with the thresholds they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdScores {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl ThresholdScores {
    fn from_fn(thresholds: &IoUThresholds, f: impl Fn(f64) -> f64) -> Self {
        let thresholds = thresholds.values().to_vec();
        let values = thresholds.iter().map(|&t| f(t)).collect();
        ThresholdScores { thresholds, values }
    }

    fn zeros(thresholds: &IoUThresholds) -> Self {
        Self::from_fn(thresholds, |_| 0.0)
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, n_pred);
        let recall = ratio(tp, n_gt);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Recall@1-style grounding: only the first predicted interval counts.
pub fn score_single_grounding(
    pred: Option<&TimeInterval>,
    gt: &TimeInterval,
    thresholds: &IoUThresholds,
) -> ThresholdScores {
    match pred {
        None => ThresholdScores::zeros(thresholds),
        Some(p) => {
            let v = iou(p, gt);
            ThresholdScores::from_fn(thresholds, |t| hit(v >= t))
        }
    }
}

fn hit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// One-to-one matching of predictions to ground truths among pairs with
/// IoU ≥ `threshold`. Returns `(gt index, pred index)` pairs.
///
/// Pairs are first taken greedily in descending IoU order (ties: earlier gt,
/// then earlier pred), then augmenting paths extend the matching to maximum
/// cardinality, so the match count equals that of an exhaustive search.
pub fn match_intervals(
    preds: &[TimeInterval],
    gts: &[TimeInterval],
    threshold: f64,
) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gts.len()];
    let mut candidates = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (p, pred) in preds.iter().enumerate() {
            let v = iou(pred, gt);
            if v >= threshold {
                adj[g].push((p, v));
                candidates.push((v, g, p));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    // Augmenting paths try higher-IoU edges first.
    for edges in &mut adj {
        edges.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
    }

    let mut gt_to_pred: Vec<Option<usize>> = vec![None; gts.len()];
    let mut pred_to_gt: Vec<Option<usize>> = vec![None; preds.len()];
    for &(_, g, p) in &candidates {
        if gt_to_pred[g].is_none() && pred_to_gt[p].is_none() {
            gt_to_pred[g] = Some(p);
            pred_to_gt[p] = Some(g);
        }
    }

    fn augment(
        g: usize,
        adj: &[Vec<(usize, f64)>],
        visited: &mut [bool],
        gt_to_pred: &mut [Option<usize>],
        pred_to_gt: &mut [Option<usize>],
    ) -> bool {
        for &(p, _) in &adj[g] {
            if visited[p] {
                continue;
            }
            visited[p] = true;
            let free = match pred_to_gt[p] {
                None => true,
                Some(other) => augment(other, adj, visited, gt_to_pred, pred_to_gt),
            };
            if free {
                gt_to_pred[g] = Some(p);
                pred_to_gt[p] = Some(g);
                return true;
            }
        }
        false
    }

    for g in 0..gts.len() {
        if gt_to_pred[g].is_none() {
            let mut visited = vec![false; preds.len()];
            augment(g, &adj, &mut visited, &mut gt_to_pred, &mut pred_to_gt);
        }
    }

    gt_to_pred
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| (g, p)))
        .collect()
}

/// Set-level grounding at one threshold: every predicted interval is used.
pub fn score_set_grounding(preds: &[TimeInterval], gts: &[TimeInterval], threshold: f64) -> Prf {
    let matches = match_intervals(preds, gts, threshold).len();
    Prf::from_counts(matches, preds.len(), gts.len())
}

/// Set-level grounding averaged over thresholds; returns per-threshold F1.
pub fn score_set_grounding_all(
    preds: &[TimeInterval],
    gts: &[TimeInterval],
    thresholds: &IoUThresholds,
) -> ThresholdScores {
    ThresholdScores::from_fn(thresholds, |t| score_set_grounding(preds, gts, t).f1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipGrid {
    clip_length: f64,
    duration: f64,
}

impl ClipGrid {
    pub fn new(clip_length: f64, duration: f64) -> Result<Self, MetricsError> {
        let ok =
            clip_length.is_finite() && clip_length > 0.0 && duration.is_finite() && duration > 0.0;
        if !ok {
            return Err(MetricsError::BadGrid {
                clip_length,
                duration,
            });
        }
        Ok(ClipGrid {
            clip_length,
            duration,
        })
    }

    /// One-second clips.
    pub fn seconds(duration: f64) -> Result<Self, MetricsError> {
        Self::new(1.0, duration)
    }

    pub fn clip_length(&self) -> f64 {
        self.clip_length
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn num_clips(&self) -> usize {
        (self.duration / self.clip_length).ceil() as usize
    }

    /// Midpoint of clip `i`; the final clip may be shorter than the others.
    pub fn clip_midpoint(&self, i: usize) -> f64 {
        let start = i as f64 * self.clip_length;
        let end = ((i + 1) as f64 * self.clip_length).min(self.duration);
        0.5 * (start + end)
    }

    /// Marks every clip whose midpoint lies inside any of `intervals`.
    fn mark(&self, intervals: &[TimeInterval]) -> Vec<bool> {
        let n = self.num_clips();
        let mut marks = vec![false; n];
        for iv in intervals {
            // Closed-form estimate of the covered index range, then nudged so
            // it agrees exactly with the midpoint predicate.
            let est = |t: f64| ((t / self.clip_length) - 0.5).max(0.0).min(n as f64);
            let mut lo = est(iv.start()).ceil() as usize;
            while lo > 0 && iv.contains(self.clip_midpoint(lo - 1)) {
                lo -= 1;
            }
            while lo < n && !iv.contains(self.clip_midpoint(lo)) {
                lo += 1;
            }
            let mut hi = lo;
            while hi < n && iv.contains(self.clip_midpoint(hi)) {
                hi += 1;
            }
            for m in &mut marks[lo..hi] {
                *m = true;
            }
        }
        marks
    }
}

/// Clip-level F1 for extractive summarization.
pub fn score_evs(preds: &[TimeInterval], gts: &[TimeInterval], grid: &ClipGrid) -> Prf {
    let p = grid.mark(preds);
    let g = grid.mark(gts);
    let n_pred = p.iter().filter(|&&b| b).count();
    let n_gt = g.iter().filter(|&&b| b).count();
    let tp = p.iter().zip(&g).filter(|(a, b)| **a && **b).count();
    Prf::from_counts(tp, n_pred, n_gt)
}

/// 1.0 when the predicted instant falls inside (inclusive) any highlight region.
pub fn score_vhd(pred: Option<f64>, regions: &[TimeInterval]) -> f64 {
    match pred {
        Some(t) => hit(regions.iter().any(|r| r.contains(t))),
        None => 0.0,
    }
}

/// Event matching: the first predicted interval is a hit at θ when its best
/// IoU over all ground truths reaches θ.
pub fn score_tem(
    pred: Option<&TimeInterval>,
    gts: &[TimeInterval],
    thresholds: &IoUThresholds,
) -> ThresholdScores {
    let Some(p) = pred else {
        return ThresholdScores::zeros(thresholds);
    };
    let best = gts.iter().map(|g| iou(p, g)).fold(0.0, f64::max);
    ThresholdScores::from_fn(thresholds, |t| hit(best >= t))
}

/// Grounded QA: a hit requires the right letter and IoU ≥ θ.
pub fn score_gvq(
    pred: Option<(OptionLetter, &TimeInterval)>,
    gt: (OptionLetter, &TimeInterval),
    thresholds: &IoUThresholds,
) -> ThresholdScores {
    match pred {
        Some((letter, iv)) if letter == gt.0 => {
            let v = iou(iv, gt.1);
            ThresholdScores::from_fn(thresholds, |t| hit(v >= t))
        }
        _ => ThresholdScores::zeros(thresholds),
    }
}

pub fn score_mcq(pred: Option<OptionLetter>, gt: OptionLetter) -> f64 {
    hit(pred == Some(gt))
}
