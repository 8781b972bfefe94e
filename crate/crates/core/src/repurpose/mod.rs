//! Seeded annotation-repurposing procedures and pre-filter predicates.

mod build;

pub use build::{build_sample, AnnotatedEvent, BuildError, GenOutcome, SourceAnnotation};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TimeInterval;
use crate::metrics::iou;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepurposeError {
    #[error("constraints not satisfied within {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("ground truth of {gt_len}s does not fit a {window_len}s window")]
    WindowInfeasible { gt_len: f64, window_len: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Rejection-sampling budget per generated distracter.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Deterministic random stream from an explicit 64-bit seed.
#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Stream for one sample, derived from the run's master seed and the sample id.
    pub fn for_sample(master: u64, sample_id: &str) -> Self {
        SeededRng::new(derive_seed(master, sample_id))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.0.gen_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.0.gen_bool(p.clamp(0.0, 1.0))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.0);
    }
}

/// FNV-1a over the id, mixed with the master seed by splitmix64.
pub fn derive_seed(master: u64, sample_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in sample_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterRule {
    DurationRange { min: f64, max: f64 },
    EventDurationRange { min: f64, max: f64 },
    MinEvents { min: usize },
    MaxSegments { max: usize },
    ClassBlocklist { classes: Vec<String> },
    SummaryRatioRange { min: f64, max: f64 },
    HighlightRatioRange { min: f64, max: f64 },
}

impl FilterRule {
    pub fn id(&self) -> &'static str {
        match self {
            FilterRule::DurationRange { .. } => "duration_range",
            FilterRule::EventDurationRange { .. } => "event_duration_range",
            FilterRule::MinEvents { .. } => "min_events",
            FilterRule::MaxSegments { .. } => "max_segments",
            FilterRule::ClassBlocklist { .. } => "class_blocklist",
            FilterRule::SummaryRatioRange { .. } => "summary_ratio_range",
            FilterRule::HighlightRatioRange { .. } => "highlight_ratio_range",
        }
    }

    pub fn validate(&self) -> Result<(), RepurposeError> {
        let range = |min: f64, max: f64| {
            if min.is_finite() && max.is_finite() && min <= max {
                Ok(())
            } else {
                Err(RepurposeError::InvalidInput(format!(
                    "{}: bounds [{min}, {max}] must be finite and ordered",
                    self.id()
                )))
            }
        };
        match self {
            FilterRule::DurationRange { min, max }
            | FilterRule::EventDurationRange { min, max }
            | FilterRule::SummaryRatioRange { min, max }
            | FilterRule::HighlightRatioRange { min, max } => range(*min, *max),
            _ => Ok(()),
        }
    }

    fn passes(&self, m: &SampleMeta) -> bool {
        let within = |v: f64, min: f64, max: f64| min <= v && v <= max;
        match self {
            FilterRule::DurationRange { min, max } => within(m.duration, *min, *max),
            FilterRule::EventDurationRange { min, max } => {
                m.event_durations.iter().all(|&d| within(d, *min, *max))
            }
            FilterRule::MinEvents { min } => m.event_durations.len() >= *min,
            FilterRule::MaxSegments { max } => m.event_durations.len() <= *max,
            FilterRule::ClassBlocklist { classes } => m
                .class
                .as_ref()
                .is_none_or(|c| !classes.iter().any(|b| b.eq_ignore_ascii_case(c))),
            FilterRule::SummaryRatioRange { min, max } => {
                m.summary_ratio.is_none_or(|r| within(r, *min, *max))
            }
            FilterRule::HighlightRatioRange { min, max } => {
                m.highlight_ratio.is_none_or(|r| within(r, *min, *max))
            }
        }
    }
}

/// What the filters look at. Absent optional fields pass their rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMeta {
    pub duration: f64,
    pub event_durations: Vec<f64>,
    pub class: Option<String>,
    pub summary_ratio: Option<f64>,
    pub highlight_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Keep,
    Drop(&'static str),
}

/// Keeps the sample unless a rule fails; reports the first failing rule.
pub fn apply_filters(meta: &SampleMeta, rules: &[FilterRule]) -> FilterOutcome {
    rules
        .iter()
        .find(|r| !r.passes(meta))
        .map_or(FilterOutcome::Keep, |r| FilterOutcome::Drop(r.id()))
}

/// Three distracter intervals with 0.5×–2× the ground-truth length, such that
/// every pair among the ground truth and the distracters has IoU ≤ 0.5.
pub fn gen_eca_distracters(
    gt: &TimeInterval,
    duration: f64,
    rng: &mut SeededRng,
) -> Result<[TimeInterval; 3], RepurposeError> {
    let len = gt.duration();
    if !(len > 0.0) || !(duration > 0.0) {
        return Err(RepurposeError::InvalidInput(format!(
            "ground truth length {len} and duration {duration} must be positive"
        )));
    }
    let min_len = 0.5 * len;
    let max_len = (2.0 * len).min(duration);
    if min_len > duration {
        return Err(RepurposeError::GenerationExhausted { attempts: 0 });
    }
    let mut accepted: Vec<TimeInterval> = vec![*gt];
    for _ in 0..3 {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let l = rng.uniform(min_len, max_len);
            let start = rng.uniform(0.0, duration - l);
            let cand = TimeInterval::unchecked(start, (start + l).min(duration));
            if accepted.iter().all(|a| iou(a, &cand) <= 0.5) {
                found = Some(cand);
                break;
            }
        }
        accepted.push(found.ok_or(RepurposeError::GenerationExhausted {
            attempts: MAX_ATTEMPTS,
        })?);
    }
    Ok([accepted[1], accepted[2], accepted[3]])
}

/// Moves a boundary to a same-length position with no overlap with the original.
pub fn gen_rvq_shifted(
    boundary: &TimeInterval,
    duration: f64,
    rng: &mut SeededRng,
) -> Result<TimeInterval, RepurposeError> {
    let len = boundary.duration();
    let left_room = boundary.start() - len;
    let right_room = duration - len - boundary.end();
    let (left, right) = (left_room.max(0.0), right_room.max(0.0));
    let left_ok = left_room >= 0.0;
    let right_ok = right_room >= 0.0;
    if !left_ok && !right_ok {
        return Err(RepurposeError::GenerationExhausted { attempts: 1 });
    }
    // Pick a side proportionally to its room (falling back to whichever side fits).
    let go_left = match (left_ok, right_ok) {
        (true, false) => true,
        (false, true) => false,
        _ => {
            let total = left + right;
            total <= 0.0 || rng.uniform(0.0, total) < left
        }
    };
    if go_left {
        let end = boundary.start() - rng.uniform(0.0, left);
        Ok(TimeInterval::unchecked(
            (end - len).max(0.0),
            end.min(boundary.start()),
        ))
    } else {
        let start = boundary.end() + rng.uniform(0.0, right);
        Ok(TimeInterval::unchecked(
            start.max(boundary.end()),
            (start + len).min(duration),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreTrack {
    scores: Vec<Vec<f64>>,
    frame_rate: f64,
}

impl FrameScoreTrack {
    /// One row of per-frame scores per annotator.
    pub fn new(scores: Vec<Vec<f64>>, frame_rate: f64) -> Result<Self, RepurposeError> {
        let n = scores.first().map_or(0, Vec::len);
        if n == 0 || scores.iter().any(|r| r.len() != n) {
            return Err(RepurposeError::InvalidInput(
                "score rows must be non-empty and of equal length".into(),
            ));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(RepurposeError::InvalidInput(format!(
                "frame rate {frame_rate} must be positive"
            )));
        }
        Ok(FrameScoreTrack { scores, frame_rate })
    }

    pub fn num_frames(&self) -> usize {
        self.scores[0].len()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// Per-frame mean across annotators.
    pub fn averaged(&self) -> Vec<f64> {
        let rows = self.scores.len() as f64;
        (0..self.num_frames())
            .map(|i| self.scores.iter().map(|r| r[i]).sum::<f64>() / rows)
            .collect()
    }

    /// Frame `i` covers `[i/fr, (i+1)/fr)`; consecutive selected frames merge.
    fn runs_to_intervals(&self, selected: &[bool]) -> Vec<TimeInterval> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < selected.len() {
            if !selected[i] {
                i += 1;
                continue;
            }
            let first = i;
            while i < selected.len() && selected[i] {
                i += 1;
            }
            out.push(TimeInterval::unchecked(
                first as f64 / self.frame_rate,
                i as f64 / self.frame_rate,
            ));
        }
        out
    }
}

pub const EVS_TOP_FRACTION: f64 = 0.15;

/// Number of frames a top-fraction selection keeps: `⌈fraction·n⌉`, with a
/// small tolerance so that e.g. `0.15·20` counts as exactly 3.
pub fn top_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Summary ground truth: the top-scoring fraction of frames (ties to earlier
/// frames) merged into runs.
pub fn evs_ground_truth(track: &FrameScoreTrack, top_fraction: f64) -> Vec<TimeInterval> {
    let avg = track.averaged();
    let k = top_count(avg.len(), top_fraction);
    let mut order: Vec<usize> = (0..avg.len()).collect();
    order.sort_by(|&a, &b| {
        avg[b]
            .partial_cmp(&avg[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected = vec![false; avg.len()];
    for &i in &order[..k] {
        selected[i] = true;
    }
    track.runs_to_intervals(&selected)
}

/// Highlight ground truth: every frame attaining the maximum averaged score.
pub fn vhd_ground_truth(track: &FrameScoreTrack) -> Vec<TimeInterval> {
    let avg = track.averaged();
    let max = avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let selected: Vec<bool> = avg.iter().map(|&s| s == max).collect();
    track.runs_to_intervals(&selected)
}

/// A window of `min(target_len, duration)` seconds placed uniformly at random,
/// constrained to contain `gt` when given.
pub fn crop_video_window(
    duration: f64,
    target_len: f64,
    gt: Option<&TimeInterval>,
    rng: &mut SeededRng,
) -> Result<TimeInterval, RepurposeError> {
    if !(target_len > 0.0) || !(duration > 0.0) {
        return Err(RepurposeError::InvalidInput(format!(
            "target length {target_len} and duration {duration} must be positive"
        )));
    }
    let len = target_len.min(duration);
    let (mut lo, mut hi) = (0.0, duration - len);
    if let Some(g) = gt {
        if g.duration() > len {
            return Err(RepurposeError::WindowInfeasible {
                gt_len: g.duration(),
                window_len: len,
            });
        }
        lo = f64::max(lo, g.end() - len);
        hi = f64::min(hi, g.start());
    }
    let start = rng.uniform(lo, hi).clamp(lo, hi.max(lo));
    Ok(TimeInterval::unchecked(start, start + len))
}

/// Re-expresses `iv` in the coordinates of `window`, clamped to it.
pub fn shift_into_window(iv: &TimeInterval, window: &TimeInterval) -> TimeInterval {
    let len = window.duration();
    let f = |t: f64| (t - window.start()).clamp(0.0, len);
    TimeInterval::unchecked(f(iv.start()), f(iv.end()))
}

/// Fraction of QA pairs turned unanswerable by shifting their boundary.
pub const RVQ_UNANSWERABLE_RATE: f64 = 0.2;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn spans(v: &[TimeInterval]) -> Vec<(f64, f64)> {
        v.iter().map(|i| (i.start(), i.end())).collect()
    }

    #[test]
    fn filter_examples() {
        let dur = [FilterRule::DurationRange {
            min: 20.0,
            max: 600.0,
        }];
        let meta = SampleMeta {
            duration: 700.0,
            ..Default::default()
        };
        assert_eq!(
            apply_filters(&meta, &dur),
            FilterOutcome::Drop("duration_range")
        );

        let meta = SampleMeta {
            duration: 100.0,
            event_durations: vec![3.0; 11],
            ..Default::default()
        };
        let rules = [dur[0].clone(), FilterRule::MaxSegments { max: 10 }];
        assert_eq!(
            apply_filters(&meta, &rules),
            FilterOutcome::Drop("max_segments")
        );

        let meta = SampleMeta {
            duration: 100.0,
            class: Some("other".into()),
            ..Default::default()
        };
        let rules = [FilterRule::ClassBlocklist {
            classes: vec!["other".into()],
        }];
        assert_eq!(
            apply_filters(&meta, &rules),
            FilterOutcome::Drop("class_blocklist")
        );
        assert_eq!(
            apply_filters(&SampleMeta::default(), &rules),
            FilterOutcome::Keep
        );
    }

    #[test]
    fn first_failing_rule_wins() {
        let meta = SampleMeta {
            duration: 5.0,
            event_durations: vec![1.0],
            ..Default::default()
        };
        let rules = [
            FilterRule::MinEvents { min: 2 },
            FilterRule::DurationRange {
                min: 10.0,
                max: 20.0,
            },
        ];
        assert_eq!(
            apply_filters(&meta, &rules),
            FilterOutcome::Drop("min_events")
        );
    }

    #[test]
    fn rules_parse_from_json_and_validate() {
        let rules: Vec<FilterRule> = serde_json::from_str(
            r#"[{"kind":"duration_range","min":20,"max":600},{"kind":"class_blocklist","classes":["other"]}]"#,
        )
        .unwrap();
        assert_eq!(rules[0].id(), "duration_range");
        assert!(FilterRule::DurationRange { min: 5.0, max: 1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn eca_distracters_respect_constraints() {
        let gt = iv(10.0, 20.0);
        let mut rng = SeededRng::new(1);
        let ds = gen_eca_distracters(&gt, 300.0, &mut rng).unwrap();
        let all = [gt, ds[0], ds[1], ds[2]];
        for d in &ds {
            assert!((5.0..=20.0).contains(&d.duration()));
            assert!(d.start() >= 0.0 && d.end() <= 300.0);
        }
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(iou(&all[i], &all[j]) <= 0.5);
            }
        }
        let again = gen_eca_distracters(&gt, 300.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn eca_distracters_exhaust_when_no_room() {
        let err = gen_eca_distracters(&iv(0.0, 10.0), 12.0, &mut SeededRng::new(3)).unwrap_err();
        assert!(matches!(err, RepurposeError::GenerationExhausted { .. }));
        assert!(gen_eca_distracters(&iv(3.0, 3.0), 12.0, &mut SeededRng::new(3)).is_err());
    }

    #[test]
    fn rvq_shift_examples() {
        let b = iv(10.0, 20.0);
        let s = gen_rvq_shifted(&b, 100.0, &mut SeededRng::new(7)).unwrap();
        assert!(s.end() <= 10.0 || s.start() >= 20.0);
        assert!((s.duration() - 10.0).abs() < 1e-9);

        let b = iv(0.0, 60.0);
        let s = gen_rvq_shifted(&b, 100.0, &mut SeededRng::new(7));
        // Only 40 s remain after the boundary: no same-length placement exists.
        assert!(s.is_err());
        let s = gen_rvq_shifted(&b, 120.0, &mut SeededRng::new(7)).unwrap();
        assert_eq!(spans(&[s]), vec![(60.0, 120.0)]);

        let a = gen_rvq_shifted(&b, 130.0, &mut SeededRng::new(9)).unwrap();
        let c = gen_rvq_shifted(&b, 130.0, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, c);
        assert!(a.start() >= 60.0 && a.end() <= 130.0);
    }

    #[test]
    fn evs_examples() {
        let t = FrameScoreTrack::new(
            vec![vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
            1.0,
        )
        .unwrap();
        assert_eq!(spans(&evs_ground_truth(&t, 0.15)), vec![(0.0, 2.0)]);

        let t = FrameScoreTrack::new(vec![vec![0.3; 20]], 1.0).unwrap();
        assert_eq!(spans(&evs_ground_truth(&t, 0.15)), vec![(0.0, 3.0)]);

        let t = FrameScoreTrack::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        assert_eq!(spans(&evs_ground_truth(&t, 0.15)), vec![(0.0, 1.0)]);
    }

    #[test]
    fn evs_uses_frame_rate() {
        let t = FrameScoreTrack::new(
            vec![vec![0.0, 0.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
            2.0,
        )
        .unwrap();
        assert_eq!(spans(&evs_ground_truth(&t, 0.15)), vec![(1.0, 2.0)]);
    }

    #[test]
    fn vhd_examples() {
        let t = FrameScoreTrack::new(vec![vec![0.0, 3.0, 3.0, 1.0]], 1.0).unwrap();
        assert_eq!(spans(&vhd_ground_truth(&t)), vec![(1.0, 3.0)]);
        let t = FrameScoreTrack::new(vec![vec![4.0]], 1.0).unwrap();
        assert_eq!(spans(&vhd_ground_truth(&t)), vec![(0.0, 1.0)]);
        let t = FrameScoreTrack::new(vec![vec![3.0, 0.0, 3.0]], 1.0).unwrap();
        assert_eq!(spans(&vhd_ground_truth(&t)), vec![(0.0, 1.0), (2.0, 3.0)]);
    }

    #[test]
    fn track_validation() {
        assert!(FrameScoreTrack::new(vec![], 1.0).is_err());
        assert!(FrameScoreTrack::new(vec![vec![1.0], vec![1.0, 2.0]], 1.0).is_err());
        assert!(FrameScoreTrack::new(vec![vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn crop_examples() {
        let mut rng = SeededRng::new(5);
        let w = crop_video_window(200.0, 300.0, None, &mut rng).unwrap();
        assert_eq!(spans(&[w]), vec![(0.0, 200.0)]);

        let gt = iv(500.0, 520.0);
        for seed in 0..50 {
            let w = crop_video_window(600.0, 300.0, Some(&gt), &mut SeededRng::new(seed)).unwrap();
            assert!(w.start() <= 500.0 && w.end() >= 520.0);
            assert!((w.duration() - 300.0).abs() < 1e-9);
            assert!(w.end() <= 600.0 + 1e-9);
            let shifted = shift_into_window(&gt, &w);
            assert!((shifted.duration() - 20.0).abs() < 1e-9);
        }

        let err = crop_video_window(600.0, 300.0, Some(&iv(0.0, 400.0)), &mut rng).unwrap_err();
        assert!(matches!(err, RepurposeError::WindowInfeasible { .. }));
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(0, "a"), derive_seed(0, "a"));
        assert_ne!(derive_seed(0, "a"), derive_seed(0, "b"));
        assert_ne!(derive_seed(0, "a"), derive_seed(1, "a"));
        let mut r = SeededRng::new(42);
        let first: Vec<f64> = (0..3).map(|_| r.uniform(0.0, 1.0)).collect();
        let mut r = SeededRng::new(42);
        let again: Vec<f64> = (0..3).map(|_| r.uniform(0.0, 1.0)).collect();
        assert_eq!(first, again);
    }

    proptest! {
        #[test]
        fn evs_intervals_cover_exactly_top_count(
            scores in proptest::collection::vec(0u8..5, 1..60),
            frac in 0.01f64..1.0,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let n = scores.len();
            let t = FrameScoreTrack::new(vec![scores], 1.0).unwrap();
            let ivs = evs_ground_truth(&t, frac);
            let covered: f64 = ivs.iter().map(|i| i.duration()).sum();
            prop_assert_eq!(covered as usize, top_count(n, frac));
            for w in ivs.windows(2) {
                prop_assert!(w[0].end() < w[1].start());
            }
        }

        #[test]
        fn rvq_shift_never_overlaps(
            start in 0.0f64..100.0, len in 0.5f64..30.0, extra in 0.0f64..100.0, seed in any::<u64>(),
        ) {
            let b = TimeInterval::new(start, start + len).unwrap();
            let d = start + len + extra;
            if let Ok(s) = gen_rvq_shifted(&b, d, &mut SeededRng::new(seed)) {
                prop_assert_eq!(iou(&s, &b), 0.0);
                prop_assert!(s.start() >= 0.0 && s.end() <= d);
            }
        }
    }
}
