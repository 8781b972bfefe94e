//! Shared value types: intervals, task kinds, samples, predictions and score records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invariant violated on `{field}`: {detail}")]
    InvariantViolation { field: String, detail: String },
}

impl DomainError {
    pub(crate) fn violation(field: impl Into<String>, detail: impl Into<String>) -> Self {
        DomainError::InvariantViolation {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

/// Closed interval of seconds inside a video.
///
/// Serialized as a two-element array `[start, end]`. Deserialization does not
/// check ordering; [`validate_sample`] does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, DomainError> {
        let iv = TimeInterval { start, end };
        iv.check("interval")?;
        Ok(iv)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Inclusive containment of a point.
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub(crate) fn unchecked(start: f64, end: f64) -> Self {
        TimeInterval { start, end }
    }

    fn check(&self, field: &str) -> Result<(), DomainError> {
        if !self.start.is_finite() || !self.end.is_finite() {
            return Err(DomainError::violation(field, "endpoints must be finite"));
        }
        if self.start < 0.0 {
            return Err(DomainError::violation(
                field,
                format!("start {} is negative", self.start),
            ));
        }
        if self.start > self.end {
            return Err(DomainError::violation(
                field,
                format!("start {} exceeds end {}", self.start, self.end),
            ));
        }
        Ok(())
    }

    fn check_within(&self, field: &str, duration: f64) -> Result<(), DomainError> {
        self.check(field)?;
        if self.end > duration {
            return Err(DomainError::violation(
                field,
                format!("end {} exceeds video duration {}", self.end, duration),
            ));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for TimeInterval {
    fn from(v: [f64; 2]) -> Self {
        TimeInterval::unchecked(v[0], v[1])
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(iv: TimeInterval) -> Self {
        [iv.start, iv.end]
    }
}

/// Clamps both endpoints into `[0, duration]`. Ordering is preserved because
/// clamping is monotone.
pub fn clamp_interval(iv: TimeInterval, duration: f64) -> TimeInterval {
    let clamp = |t: f64| t.max(0.0).min(duration);
    TimeInterval::unchecked(clamp(iv.start), clamp(iv.end))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    Referring,
    Grounding,
    DenseCaptioning,
    Complex,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::Referring,
        Capability::Grounding,
        Capability::DenseCaptioning,
        Capability::Complex,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    RAR,
    ECA,
    RVQ,
    TVG,
    EPM,
    TAL,
    EVS,
    VHD,
    DVC,
    SLC,
    TEM,
    GVQ,
}

impl TaskKind {
    /// All tasks in reporting order.
    pub const ALL: [TaskKind; 12] = [
        TaskKind::RAR,
        TaskKind::ECA,
        TaskKind::RVQ,
        TaskKind::TVG,
        TaskKind::EPM,
        TaskKind::TAL,
        TaskKind::EVS,
        TaskKind::VHD,
        TaskKind::DVC,
        TaskKind::SLC,
        TaskKind::TEM,
        TaskKind::GVQ,
    ];

    pub fn capability(self) -> Capability {
        use TaskKind::*;
        match self {
            RAR | ECA | RVQ => Capability::Referring,
            TVG | EPM | TAL | EVS | VHD => Capability::Grounding,
            DVC | SLC => Capability::DenseCaptioning,
            TEM | GVQ => Capability::Complex,
        }
    }

    pub fn as_str(self) -> &'static str {
        use TaskKind::*;
        match self {
            RAR => "RAR",
            ECA => "ECA",
            RVQ => "RVQ",
            TVG => "TVG",
            EPM => "EPM",
            TAL => "TAL",
            EVS => "EVS",
            VHD => "VHD",
            DVC => "DVC",
            SLC => "SLC",
            TEM => "TEM",
            GVQ => "GVQ",
        }
    }

    /// Letters a multiple-choice answer may take for this task, if it has one.
    pub fn mcq_letters(self) -> &'static [OptionLetter] {
        use TaskKind::*;
        match self {
            RVQ => &OptionLetter::ALL,
            RAR | ECA | GVQ => &OptionLetter::ALL[..4],
            _ => &[],
        }
    }

    fn expected_ground_truth(self) -> &'static str {
        use TaskKind::*;
        match self {
            RAR | ECA | RVQ => "mcq_answer",
            TVG | EPM => "single_interval",
            TAL | EVS | TEM => "interval_set",
            VHD => "highlight_regions",
            DVC | SLC => "captioned_segments",
            GVQ => "grounded_mcq",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::violation("task", format!("unknown task kind `{s}`")))
    }
}

/// Multiple-choice letter, `A` through `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OptionLetter(char);

impl OptionLetter {
    pub const ALL: [OptionLetter; 5] = [
        OptionLetter('A'),
        OptionLetter('B'),
        OptionLetter('C'),
        OptionLetter('D'),
        OptionLetter('E'),
    ];

    pub fn new(c: char) -> Result<Self, DomainError> {
        let c = c.to_ascii_uppercase();
        if ('A'..='E').contains(&c) {
            Ok(OptionLetter(c))
        } else {
            Err(DomainError::violation(
                "answer",
                format!("`{c}` is not an option letter A-E"),
            ))
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        OptionLetter::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<String> for OptionLetter {
    type Error = DomainError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => OptionLetter::new(c),
            _ => Err(DomainError::violation(
                "answer",
                format!("`{s}` is not a single option letter"),
            )),
        }
    }
}

impl From<OptionLetter> for String {
    fn from(l: OptionLetter) -> Self {
        l.0.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionedSegment {
    pub interval: TimeInterval,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    McqAnswer {
        answer: OptionLetter,
    },
    SingleInterval {
        interval: TimeInterval,
    },
    IntervalSet {
        intervals: Vec<TimeInterval>,
    },
    HighlightRegions {
        regions: Vec<TimeInterval>,
    },
    CaptionedSegments {
        segments: Vec<CaptionedSegment>,
    },
    GroundedMcq {
        answer: OptionLetter,
        interval: TimeInterval,
    },
}

impl GroundTruth {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GroundTruth::McqAnswer { .. } => "mcq_answer",
            GroundTruth::SingleInterval { .. } => "single_interval",
            GroundTruth::IntervalSet { .. } => "interval_set",
            GroundTruth::HighlightRegions { .. } => "highlight_regions",
            GroundTruth::CaptionedSegments { .. } => "captioned_segments",
            GroundTruth::GroundedMcq { .. } => "grounded_mcq",
        }
    }

    pub fn matches_task(&self, task: TaskKind) -> bool {
        self.kind_name() == task.expected_ground_truth()
    }

    fn intervals(&self) -> Vec<TimeInterval> {
        match self {
            GroundTruth::McqAnswer { .. } => Vec::new(),
            GroundTruth::SingleInterval { interval }
            | GroundTruth::GroundedMcq { interval, .. } => {
                vec![*interval]
            }
            GroundTruth::IntervalSet { intervals } => intervals.clone(),
            GroundTruth::HighlightRegions { regions } => regions.clone(),
            GroundTruth::CaptionedSegments { segments } => {
                segments.iter().map(|s| s.interval).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task: TaskKind,
    pub source: String,
    pub video: String,
    pub duration: f64,
    pub instruction: String,
    pub ground_truth: GroundTruth,
}

/// Returns the sample unchanged when every type invariant holds.
pub fn validate_sample(s: Sample) -> Result<Sample, DomainError> {
    if s.id.is_empty() {
        return Err(DomainError::violation("id", "must not be empty"));
    }
    if !(s.duration.is_finite() && s.duration > 0.0) {
        return Err(DomainError::violation(
            "duration",
            format!("{} is not a positive finite duration", s.duration),
        ));
    }
    if !s.ground_truth.matches_task(s.task) {
        return Err(DomainError::violation(
            "ground_truth",
            format!(
                "variant `{}` does not fit task {} (expected `{}`)",
                s.ground_truth.kind_name(),
                s.task,
                s.task.expected_ground_truth()
            ),
        ));
    }
    if let GroundTruth::McqAnswer { answer } | GroundTruth::GroundedMcq { answer, .. } =
        &s.ground_truth
    {
        if !s.task.mcq_letters().contains(answer) {
            return Err(DomainError::violation(
                "ground_truth.answer",
                format!("letter {answer} not allowed for {}", s.task),
            ));
        }
    }
    let intervals = s.ground_truth.intervals();
    let needs_nonempty = !matches!(s.ground_truth, GroundTruth::McqAnswer { .. });
    if needs_nonempty && intervals.is_empty() {
        return Err(DomainError::violation(
            "ground_truth",
            "at least one interval is required",
        ));
    }
    for (i, iv) in intervals.iter().enumerate() {
        iv.check_within(&format!("ground_truth[{i}]"), s.duration)?;
    }
    Ok(s)
}

/// Why a free-text response could not be turned into a structured answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    #[serde(rename = "no-choice")]
    NoChoice,
    #[serde(rename = "no-intervals")]
    NoIntervals,
    #[serde(rename = "no-point")]
    NoPoint,
    #[serde(rename = "no-segments")]
    NoSegments,
}

impl FailureReason {
    pub fn code(self) -> &'static str {
        match self {
            FailureReason::NoChoice => "no-choice",
            FailureReason::NoIntervals => "no-intervals",
            FailureReason::NoPoint => "no-point",
            FailureReason::NoSegments => "no-segments",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedPrediction {
    Mcq {
        answer: OptionLetter,
    },
    Interval {
        interval: TimeInterval,
    },
    Intervals {
        intervals: Vec<TimeInterval>,
    },
    Point {
        time: f64,
    },
    Captioned {
        segments: Vec<CaptionedSegment>,
    },
    Grounded {
        answer: OptionLetter,
        interval: TimeInterval,
    },
    Failure {
        reason: FailureReason,
    },
}

impl ParsedPrediction {
    pub fn is_failure(&self) -> bool {
        matches!(self, ParsedPrediction::Failure { .. })
    }
}

/// Per-sample metric values, keyed by metric name (`acc`, `f1@0.3`, `sim`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub metrics: BTreeMap<String, f64>,
}

impl ScoreRecord {
    pub fn new(
        sample_id: impl Into<String>,
        metrics: BTreeMap<String, f64>,
    ) -> Result<Self, DomainError> {
        for (name, v) in &metrics {
            if !(0.0..=1.0).contains(v) {
                return Err(DomainError::violation(
                    format!("metrics.{name}"),
                    format!("{v} outside [0, 1]"),
                ));
            }
        }
        Ok(ScoreRecord {
            sample_id: sample_id.into(),
            metrics,
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tvg(gt: [f64; 2], duration: f64) -> Sample {
        Sample {
            id: "s1".into(),
            task: TaskKind::TVG,
            source: "charades_sta".into(),
            video: "v.mp4".into(),
            duration,
            instruction: "find it".into(),
            ground_truth: GroundTruth::SingleInterval {
                interval: gt.into(),
            },
        }
    }

    #[test]
    fn validate_accepts_well_formed_tvg() {
        let s = tvg([10.2, 12.8], 60.0);
        assert_eq!(validate_sample(s.clone()).unwrap(), s);
    }

    #[test]
    fn validate_accepts_zero_length_interval() {
        assert!(validate_sample(tvg([5.0, 5.0], 10.0)).is_ok());
    }

    #[test]
    fn validate_rejects_reversed_interval() {
        let err = validate_sample(tvg([50.0, 40.0], 60.0)).unwrap_err();
        assert!(matches!(err, DomainError::InvariantViolation { .. }));
    }

    #[test]
    fn validate_rejects_out_of_range_and_bad_duration() {
        assert!(validate_sample(tvg([10.0, 70.0], 60.0)).is_err());
        assert!(validate_sample(tvg([1.0, 2.0], 0.0)).is_err());
        assert!(validate_sample(tvg([1.0, 2.0], f64::NAN)).is_err());
    }

    #[test]
    fn validate_rejects_variant_mismatch() {
        let mut s = tvg([1.0, 2.0], 60.0);
        s.task = TaskKind::RAR;
        let err = validate_sample(s).unwrap_err();
        assert!(err.to_string().contains("ground_truth"));
    }

    #[test]
    fn validate_rejects_letter_outside_task_set() {
        let s = Sample {
            ground_truth: GroundTruth::McqAnswer {
                answer: OptionLetter::new('E').unwrap(),
            },
            task: TaskKind::RAR,
            ..tvg([1.0, 2.0], 60.0)
        };
        assert!(validate_sample(s.clone()).is_err());
        let s = Sample {
            task: TaskKind::RVQ,
            ..s
        };
        assert!(validate_sample(s).is_ok());
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_interval(TimeInterval::unchecked(-1.0, 5.0), 10.0);
        assert_eq!((c.start(), c.end()), (0.0, 5.0));
        let c = clamp_interval(TimeInterval::unchecked(3.0, 99.0), 10.0);
        assert_eq!((c.start(), c.end()), (3.0, 10.0));
        let c = clamp_interval(TimeInterval::unchecked(2.0, 8.0), 10.0);
        assert_eq!((c.start(), c.end()), (2.0, 8.0));
    }

    #[test]
    fn manifest_line_schema() {
        let s = tvg([10.2, 12.8], 60.0);
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"id":"s1","task":"TVG","source":"charades_sta","video":"v.mp4","duration":60.0,"instruction":"find it","ground_truth":{"kind":"single_interval","interval":[10.2,12.8]}}"#
        );
    }

    #[test]
    fn letters_parse_and_reject() {
        assert_eq!(OptionLetter::new('c').unwrap().as_char(), 'C');
        assert!(OptionLetter::new('F').is_err());
        assert!(serde_json::from_str::<OptionLetter>("\"AB\"").is_err());
        assert_eq!(OptionLetter::from_index(4).unwrap().index(), 4);
    }

    #[test]
    fn every_task_has_one_capability() {
        let referring = TaskKind::ALL
            .iter()
            .filter(|t| t.capability() == Capability::Referring)
            .count();
        assert_eq!(referring, 3);
        assert_eq!(TaskKind::DVC.capability(), Capability::DenseCaptioning);
        assert_eq!("gvq".parse::<TaskKind>().unwrap(), TaskKind::GVQ);
    }

    #[test]
    fn score_record_rejects_out_of_range() {
        let mut m = BTreeMap::new();
        m.insert("acc".to_string(), 1.5);
        assert!(ScoreRecord::new("x", m).is_err());
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(a in -50.0f64..150.0, len in 0.0f64..100.0, d in 0.1f64..120.0) {
            let iv = TimeInterval::unchecked(a, a + len);
            let once = clamp_interval(iv, d);
            prop_assert_eq!(clamp_interval(once, d), once);
            prop_assert!(once.start() <= once.end());
        }

        #[test]
        fn valid_samples_round_trip_through_json(
            a in 0.0f64..50.0, len in 0.0f64..10.0, extra in 0.1f64..100.0,
        ) {
            let s = tvg([a, a + len], a + len + extra);
            let s = validate_sample(s).unwrap();
            let back: Sample = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
