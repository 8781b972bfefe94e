//! Sample + free-text response → per-sample metric record.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use thiserror::Error;

use crate::domain::{DomainError, GroundTruth, ParsedPrediction, Sample, ScoreRecord, TaskKind};
use crate::metrics::{
    score_evs, score_gvq, score_mcq, score_set_grounding_all, score_single_grounding, score_tem,
    score_vhd, ClipGrid, IoUThresholds, MetricsError, ThresholdScores,
};
use crate::par::{self, Execution};
use crate::parse::{parse_for_task, ParseConfig};
use crate::simscore::{sim_score, Embedder, FallbackEmbedder, SimConfig, SimError};

/// Metric names used in score files.
pub mod keys {
    pub const ACC: &str = "acc";
    pub const F1: &str = "f1";
    pub const SIM: &str = "sim";
    pub const RECALL: &str = "recall";

    /// e.g. `f1@0.3`.
    pub fn at(prefix: &str, threshold: f64) -> String {
        format!("{prefix}@{threshold}")
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("sample `{id}`: {source}")]
    Sim {
        id: String,
        #[source]
        source: SimError,
    },
    #[error("sample `{id}`: {source}")]
    Metrics {
        id: String,
        #[source]
        source: MetricsError,
    },
    #[error("sample `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: DomainError,
    },
}

pub struct ScoringContext {
    pub thresholds: IoUThresholds,
    pub parse: ParseConfig,
    pub sim: SimConfig,
    pub embedder: Box<dyn Embedder>,
}

impl Default for ScoringContext {
    fn default() -> Self {
        ScoringContext {
            thresholds: IoUThresholds::default(),
            parse: ParseConfig::default(),
            sim: SimConfig::default(),
            embedder: Box::new(FallbackEmbedder),
        }
    }
}

/// The headline metric of a task (`acc`, `f1` or `recall`).
pub fn primary_metric(task: TaskKind) -> &'static str {
    use TaskKind::*;
    match task {
        RAR | ECA | RVQ => keys::ACC,
        TVG | EPM | TAL | EVS | VHD | DVC | SLC => keys::F1,
        TEM | GVQ => keys::RECALL,
    }
}

fn put_thresholds(m: &mut BTreeMap<String, f64>, prefix: &str, s: &ThresholdScores) {
    for (t, v) in s.thresholds.iter().zip(&s.values) {
        m.insert(keys::at(prefix, *t), *v);
    }
    m.insert(prefix.to_owned(), s.mean());
}

/// Parses `response` for the sample's task and scores it. Unparseable
/// responses score zero on every metric.
pub fn score_sample(
    sample: &Sample,
    response: &str,
    ctx: &ScoringContext,
) -> Result<ScoreRecord, ScoringError> {
    let pred = parse_for_task(sample.task, response, sample.duration, &ctx.parse);
    score_prediction(sample, &pred, ctx)
}

pub fn score_prediction(
    sample: &Sample,
    pred: &ParsedPrediction,
    ctx: &ScoringContext,
) -> Result<ScoreRecord, ScoringError> {
    use ParsedPrediction as P;
    let th = &ctx.thresholds;
    let mut m = BTreeMap::new();
    match &sample.ground_truth {
        GroundTruth::McqAnswer { answer } => {
            let p = match pred {
                P::Mcq { answer } => Some(*answer),
                _ => None,
            };
            m.insert(keys::ACC.into(), score_mcq(p, *answer));
        }
        GroundTruth::SingleInterval { interval } => {
            let p = match pred {
                P::Interval { interval } => Some(interval),
                P::Intervals { intervals } => intervals.first(),
                _ => None,
            };
            put_thresholds(&mut m, keys::F1, &score_single_grounding(p, interval, th));
        }
        GroundTruth::IntervalSet { intervals } => {
            let preds: &[_] = match pred {
                P::Intervals { intervals } => intervals,
                P::Interval { interval } => std::slice::from_ref(interval),
                _ => &[],
            };
            match sample.task {
                TaskKind::TEM => put_thresholds(
                    &mut m,
                    keys::RECALL,
                    &score_tem(preds.first(), intervals, th),
                ),
                TaskKind::EVS => {
                    let grid = ClipGrid::seconds(sample.duration).map_err(|source| {
                        ScoringError::Metrics {
                            id: sample.id.clone(),
                            source,
                        }
                    })?;
                    m.insert(keys::F1.into(), score_evs(preds, intervals, &grid).f1);
                }
                _ => put_thresholds(
                    &mut m,
                    keys::F1,
                    &score_set_grounding_all(preds, intervals, th),
                ),
            }
        }
        GroundTruth::HighlightRegions { regions } => {
            let p = match pred {
                P::Point { time } => Some(*time),
                _ => None,
            };
            m.insert(keys::F1.into(), score_vhd(p, regions));
        }
        GroundTruth::CaptionedSegments { segments } => {
            let preds: &[_] = match pred {
                P::Captioned { segments } => segments,
                _ => &[],
            };
            let ivs: Vec<_> = preds.iter().map(|s| s.interval).collect();
            let gts: Vec<_> = segments.iter().map(|s| s.interval).collect();
            put_thresholds(&mut m, keys::F1, &score_set_grounding_all(&ivs, &gts, th));
            let sim =
                sim_score(preds, segments, &ctx.sim, ctx.embedder.as_ref()).map_err(|source| {
                    ScoringError::Sim {
                        id: sample.id.clone(),
                        source,
                    }
                })?;
            m.insert(keys::SIM.into(), sim);
        }
        GroundTruth::GroundedMcq { answer, interval } => {
            let p = match pred {
                P::Grounded { answer, interval } => Some((*answer, interval)),
                _ => None,
            };
            put_thresholds(&mut m, keys::RECALL, &score_gvq(p, (*answer, interval), th));
        }
    }
    ScoreRecord::new(sample.id.clone(), m).map_err(|source| ScoringError::Record {
        id: sample.id.clone(),
        source,
    })
}

/// Scores every sample against `responses` (keyed by sample id), in manifest
/// order. Samples without a response score as unparseable.
pub fn score_batch(
    samples: &[Sample],
    responses: &HashMap<String, String>,
    ctx: &ScoringContext,
    exec: Execution,
) -> Vec<Result<ScoreRecord, ScoringError>> {
    par::map(samples, exec, |s| {
        let text = responses.get(&s.id).map(String::as_str).unwrap_or_else(|| {
            warn!("no response for sample `{}`", s.id);
            ""
        });
        score_sample(s, text, ctx)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CaptionedSegment, OptionLetter, TimeInterval};
    use crate::templates::render_response;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn sample(task: TaskKind, gt: GroundTruth) -> Sample {
        Sample {
            id: format!("{task}-1"),
            task,
            source: "src".into(),
            video: "v.mp4".into(),
            duration: 100.0,
            instruction: "…".into(),
            ground_truth: gt,
        }
    }

    fn all_samples() -> Vec<Sample> {
        let b = OptionLetter::new('B').unwrap();
        let caps = vec![
            CaptionedSegment {
                interval: iv(1.0, 5.0),
                caption: "cut apple".into(),
            },
            CaptionedSegment {
                interval: iv(10.0, 20.0),
                caption: "wash dishes".into(),
            },
        ];
        use GroundTruth as G;
        TaskKind::ALL
            .iter()
            .map(|&t| {
                let gt = match t {
                    TaskKind::RAR | TaskKind::ECA | TaskKind::RVQ => G::McqAnswer { answer: b },
                    TaskKind::TVG | TaskKind::EPM => G::SingleInterval {
                        interval: iv(10.0, 20.0),
                    },
                    TaskKind::TAL | TaskKind::EVS | TaskKind::TEM => G::IntervalSet {
                        intervals: vec![iv(10.0, 20.0), iv(40.0, 45.0)],
                    },
                    TaskKind::VHD => G::HighlightRegions {
                        regions: vec![iv(30.0, 34.0)],
                    },
                    TaskKind::DVC | TaskKind::SLC => G::CaptionedSegments {
                        segments: caps.clone(),
                    },
                    TaskKind::GVQ => G::GroundedMcq {
                        answer: b,
                        interval: iv(12.0, 15.5),
                    },
                };
                sample(t, gt)
            })
            .collect()
    }

    #[test]
    fn perfect_responses_score_one() {
        let ctx = ScoringContext::default();
        for s in all_samples() {
            let text = render_response(s.task, &s.ground_truth).unwrap();
            let r = score_sample(&s, &text, &ctx).unwrap();
            let key = primary_metric(s.task);
            // TEM responses name only the first of two gts, which still counts as a hit.
            assert_eq!(r.get(key), Some(1.0), "{} {text}", s.task);
            if matches!(s.task, TaskKind::DVC | TaskKind::SLC) {
                assert_eq!(r.get(keys::SIM), Some(1.0));
            }
        }
    }

    #[test]
    fn garbage_scores_zero() {
        let ctx = ScoringContext::default();
        for s in all_samples() {
            let r = score_sample(&s, "no idea", &ctx).unwrap();
            assert!(r.metrics.values().all(|&v| v == 0.0), "{}", s.task);
            assert!(r.get(primary_metric(s.task)).is_some());
        }
    }

    #[test]
    fn grounding_keys_cover_thresholds() {
        let ctx = ScoringContext::default();
        let s = &all_samples()[3];
        let r = score_sample(s, "The event happens in 10 - 16 seconds.", &ctx).unwrap();
        assert_eq!(r.get("f1@0.5"), Some(1.0));
        assert_eq!(r.get("f1@0.7"), Some(0.0));
        assert_eq!(r.get("f1@0.1"), Some(1.0));
        assert_eq!(r.get(keys::F1), Some(0.75));
    }

    #[test]
    fn batch_matches_sequential_and_handles_missing() {
        let ctx = ScoringContext::default();
        let samples = all_samples();
        let mut responses = HashMap::new();
        for s in &samples[..6] {
            responses.insert(
                s.id.clone(),
                render_response(s.task, &s.ground_truth).unwrap(),
            );
        }
        let a: Vec<_> = score_batch(&samples, &responses, &ctx, Execution::Parallel)
            .into_iter()
            .map(Result::unwrap)
            .collect();
        let b: Vec<_> = score_batch(&samples, &responses, &ctx, Execution::Sequential)
            .into_iter()
            .map(Result::unwrap)
            .collect();
        assert_eq!(a, b);
        assert_eq!(a[11].get(keys::RECALL), Some(0.0));
    }
}
