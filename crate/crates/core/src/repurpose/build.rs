//! Turns one source annotation into a benchmark sample for a given task.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    apply_filters, crop_video_window, evs_ground_truth, gen_eca_distracters, gen_rvq_shifted,
    shift_into_window, vhd_ground_truth, FilterOutcome, FilterRule, FrameScoreTrack,
    RepurposeError, SampleMeta, SeededRng, EVS_TOP_FRACTION, RVQ_UNANSWERABLE_RATE,
};
use crate::domain::{
    clamp_interval, validate_sample, CaptionedSegment, DomainError, GroundTruth, OptionLetter,
    Sample, TaskKind, TimeInterval,
};
use crate::templates::{
    domain_phrase, interval_option, render_instruction, Placeholders, TemplateError, TemplateId,
};

pub const EPM_WINDOW: f64 = 300.0;
pub const GVQ_WINDOW: f64 = 150.0;
const UNABLE: &str = "unable to answer";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("annotation `{id}`: missing `{field}` required for {task}")]
    MissingField {
        id: String,
        task: TaskKind,
        field: &'static str,
    },
    #[error("annotation `{id}`: {source}")]
    Repurpose {
        id: String,
        #[source]
        source: RepurposeError,
    },
    #[error("annotation `{id}`: {source}")]
    Template {
        id: String,
        #[source]
        source: TemplateError,
    },
    #[error("annotation `{id}`: {source}")]
    Domain {
        id: String,
        #[source]
        source: DomainError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEvent {
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Source-dataset annotation for one video (or one QA pair / query on it).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceAnnotation {
    pub id: String,
    pub source: String,
    pub video: String,
    pub duration: f64,
    pub query: Option<String>,
    pub question: Option<String>,
    pub action: Option<String>,
    pub task_name: Option<String>,
    pub domain: Option<String>,
    pub class: Option<String>,
    pub options: Vec<String>,
    pub answer: Option<String>,
    pub events: Vec<AnnotatedEvent>,
    pub frame_scores: Vec<Vec<f64>>,
    pub frame_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenOutcome {
    Kept(Sample),
    Dropped(&'static str),
}

struct Ctx<'a> {
    ann: &'a SourceAnnotation,
    task: TaskKind,
}

impl Ctx<'_> {
    fn missing(&self, field: &'static str) -> BuildError {
        BuildError::MissingField {
            id: self.ann.id.clone(),
            task: self.task,
            field,
        }
    }

    fn rep(&self, source: RepurposeError) -> BuildError {
        BuildError::Repurpose {
            id: self.ann.id.clone(),
            source,
        }
    }

    fn text(&self, v: &Option<String>, field: &'static str) -> Result<String, BuildError> {
        v.clone().ok_or_else(|| self.missing(field))
    }

    /// Events as intervals clamped to the video, warning when clamping changed them.
    fn intervals(&self) -> Result<Vec<TimeInterval>, BuildError> {
        if self.ann.events.is_empty() {
            return Err(self.missing("events"));
        }
        self.ann
            .events
            .iter()
            .map(|e| {
                let raw =
                    TimeInterval::new(e.start, e.end).map_err(|source| BuildError::Domain {
                        id: self.ann.id.clone(),
                        source,
                    })?;
                let c = clamp_interval(raw, self.ann.duration);
                if c != raw {
                    warn!(
                        "{}: event [{}, {}] clamped to [0, {}]",
                        self.ann.id, e.start, e.end, self.ann.duration
                    );
                }
                Ok(c)
            })
            .collect()
    }

    fn first(&self) -> Result<TimeInterval, BuildError> {
        Ok(self.intervals()?[0])
    }

    fn answer(&self) -> Result<OptionLetter, BuildError> {
        let raw = self.text(&self.ann.answer, "answer")?;
        let c = raw
            .trim()
            .chars()
            .next()
            .ok_or_else(|| self.missing("answer"))?;
        OptionLetter::new(c.to_ascii_uppercase()).map_err(|source| BuildError::Domain {
            id: self.ann.id.clone(),
            source,
        })
    }

    fn options(&self, n: usize) -> Result<Vec<String>, BuildError> {
        if self.ann.options.len() != n {
            return Err(self.missing("options"));
        }
        Ok(self.ann.options.clone())
    }

    fn track(&self) -> Result<FrameScoreTrack, BuildError> {
        let fr = self
            .ann
            .frame_rate
            .ok_or_else(|| self.missing("frame_rate"))?;
        FrameScoreTrack::new(self.ann.frame_scores.clone(), fr).map_err(|e| self.rep(e))
    }

    fn clamp_all(&self, ivs: Vec<TimeInterval>, duration: f64) -> Vec<TimeInterval> {
        ivs.into_iter()
            .map(|i| clamp_interval(i, duration))
            .filter(|i| i.duration() > 0.0)
            .collect()
    }

    fn segments(&self) -> Result<Vec<CaptionedSegment>, BuildError> {
        let ivs = self.intervals()?;
        ivs.into_iter()
            .zip(&self.ann.events)
            .map(|(interval, e)| {
                let caption = e
                    .label
                    .clone()
                    .ok_or_else(|| self.missing("events[].label"))?;
                Ok(CaptionedSegment { interval, caption })
            })
            .collect()
    }
}

/// Formats options as "(A) first (B) second ...".
fn option_list(options: &[String]) -> Vec<String> {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| {
            format!(
                "({}) {o}",
                OptionLetter::from_index(i).expect("≤ 5 options")
            )
        })
        .collect()
}

fn coverage(ivs: &[TimeInterval]) -> f64 {
    ivs.iter().map(TimeInterval::duration).sum()
}

/// Builds the `task` sample for one annotation, then applies `rules`.
pub fn build_sample(
    ann: &SourceAnnotation,
    task: TaskKind,
    rules: &[FilterRule],
    master_seed: u64,
) -> Result<GenOutcome, BuildError> {
    let cx = Ctx { ann, task };
    let mut rng = SeededRng::for_sample(master_seed, &ann.id);
    let mut ph = Placeholders {
        domain: domain_phrase(task, &ann.source).map(str::to_owned),
        ..Default::default()
    };
    let mut duration = ann.duration;
    let mut video = ann.video.clone();
    let mut meta = SampleMeta {
        duration: ann.duration,
        event_durations: ann.events.iter().map(|e| e.end - e.start).collect(),
        class: ann.class.clone().or_else(|| ann.action.clone()),
        ..Default::default()
    };

    let gt = match task {
        TaskKind::RAR => {
            let seg = cx.first()?;
            ph.times = vec![seg.midpoint()];
            ph.options = option_list(&cx.options(4)?);
            GroundTruth::McqAnswer {
                answer: cx.answer()?,
            }
        }
        TaskKind::ECA => {
            let gt = cx.first()?;
            ph.query = Some(cx.text(&ann.query, "query")?);
            let ds = gen_eca_distracters(&gt, duration, &mut rng).map_err(|e| cx.rep(e))?;
            let mut all = vec![(gt, true), (ds[0], false), (ds[1], false), (ds[2], false)];
            rng.shuffle(&mut all);
            let idx = all
                .iter()
                .position(|(_, is_gt)| *is_gt)
                .expect("gt present");
            ph.options = option_list(
                &all.iter()
                    .map(|(i, _)| interval_option(i))
                    .collect::<Vec<_>>(),
            );
            GroundTruth::McqAnswer {
                answer: OptionLetter::from_index(idx).expect("4 options"),
            }
        }
        TaskKind::RVQ => {
            let boundary = cx.first()?;
            ph.question = Some(cx.text(&ann.question, "question")?);
            let mut opts = cx.options(4)?;
            opts.push(UNABLE.to_owned());
            ph.options = option_list(&opts);
            let mut answer = cx.answer()?;
            let mut shown = boundary;
            if rng.bernoulli(RVQ_UNANSWERABLE_RATE) {
                match gen_rvq_shifted(&boundary, duration, &mut rng) {
                    Ok(s) => {
                        shown = s;
                        answer = OptionLetter::from_index(4).expect("E");
                    }
                    Err(e) => warn!("{}: kept answerable, {e}", ann.id),
                }
            }
            ph.times = vec![shown.start(), shown.end()];
            GroundTruth::McqAnswer { answer }
        }
        TaskKind::TVG | TaskKind::EPM => {
            let mut interval = cx.first()?;
            if task == TaskKind::TVG {
                ph.query = Some(cx.text(&ann.query, "query")?);
            } else {
                ph.question = Some(cx.text(&ann.question, "question")?);
                let w = crop_video_window(duration, EPM_WINDOW, Some(&interval), &mut rng)
                    .map_err(|e| cx.rep(e))?;
                interval = shift_into_window(&interval, &w);
                video = format!("{video}#t={},{}", w.start(), w.end());
                duration = w.duration();
            }
            GroundTruth::SingleInterval { interval }
        }
        TaskKind::TAL => {
            ph.action = Some(cx.text(&ann.action, "action")?);
            GroundTruth::IntervalSet {
                intervals: cx.intervals()?,
            }
        }
        TaskKind::EVS => {
            let track = cx.track()?;
            let ivs = cx.clamp_all(evs_ground_truth(&track, EVS_TOP_FRACTION), duration);
            meta.summary_ratio = Some(coverage(&ivs) / duration);
            ph.domain = Some(cx.text(&ann.domain, "domain")?);
            GroundTruth::IntervalSet { intervals: ivs }
        }
        TaskKind::VHD => {
            let track = cx.track()?;
            let ivs = cx.clamp_all(vhd_ground_truth(&track), duration);
            meta.highlight_ratio = Some(coverage(&ivs) / duration);
            ph.query = Some(cx.text(&ann.query, "query")?);
            GroundTruth::HighlightRegions { regions: ivs }
        }
        TaskKind::DVC | TaskKind::SLC => {
            if task == TaskKind::DVC {
                ph.query = Some(cx.text(&ann.query, "query")?);
            } else {
                ph.task = Some(cx.text(&ann.task_name, "task_name")?);
            }
            GroundTruth::CaptionedSegments {
                segments: cx.segments()?,
            }
        }
        TaskKind::TEM => {
            let ivs = cx.intervals()?;
            if ivs.len() < 2 {
                return Err(cx.missing("events[1..]"));
            }
            ph.times = vec![ivs[0].start(), ivs[0].end()];
            GroundTruth::IntervalSet {
                intervals: ivs[1..].to_vec(),
            }
        }
        TaskKind::GVQ => {
            let mut interval = cx.first()?;
            ph.question = Some(cx.text(&ann.question, "question")?);
            ph.options = option_list(&cx.options(4)?);
            let w = crop_video_window(duration, GVQ_WINDOW, Some(&interval), &mut rng)
                .map_err(|e| cx.rep(e))?;
            interval = shift_into_window(&interval, &w);
            video = format!("{video}#t={},{}", w.start(), w.end());
            duration = w.duration();
            GroundTruth::GroundedMcq {
                answer: cx.answer()?,
                interval,
            }
        }
    };

    if let FilterOutcome::Drop(rule) = apply_filters(&meta, rules) {
        return Ok(GenOutcome::Dropped(rule));
    }

    let instruction = render_instruction(TemplateId::bench(task), &ph).map_err(|source| {
        BuildError::Template {
            id: ann.id.clone(),
            source,
        }
    })?;
    let sample = Sample {
        id: ann.id.clone(),
        task,
        source: ann.source.clone(),
        video,
        duration,
        instruction,
        ground_truth: gt,
    };
    validate_sample(sample)
        .map(GenOutcome::Kept)
        .map_err(|source| BuildError::Domain {
            id: ann.id.clone(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(events: &[(f64, f64)]) -> SourceAnnotation {
        SourceAnnotation {
            id: "v1".into(),
            source: "charades_sta".into(),
            video: "v1.mp4".into(),
            duration: 100.0,
            query: Some("a person opens a door".into()),
            question: Some("what is held?".into()),
            action: Some("jump".into()),
            task_name: Some("make tea".into()),
            domain: Some("cooking".into()),
            options: vec!["cup".into(), "pen".into(), "box".into(), "bag".into()],
            answer: Some("B".into()),
            events: events
                .iter()
                .map(|&(start, end)| AnnotatedEvent {
                    start,
                    end,
                    label: Some(format!("step at {start}")),
                })
                .collect(),
            frame_scores: vec![(0..100).map(|i| (i % 7) as f64).collect()],
            frame_rate: Some(1.0),
            ..Default::default()
        }
    }

    fn kept(o: GenOutcome) -> Sample {
        match o {
            GenOutcome::Kept(s) => s,
            GenOutcome::Dropped(r) => panic!("dropped by {r}"),
        }
    }

    #[test]
    fn every_task_builds_a_valid_sample() {
        let a = ann(&[(10.0, 20.0), (40.0, 55.0), (70.0, 80.0)]);
        for task in TaskKind::ALL {
            let s = kept(build_sample(&a, task, &[], 7).unwrap());
            assert_eq!(s.task, task);
            assert!(!s.instruction.contains('{'), "{task}: {}", s.instruction);
        }
    }

    #[test]
    fn tvg_uses_source_domain_and_query() {
        let s = kept(build_sample(&ann(&[(10.0, 20.0)]), TaskKind::TVG, &[], 0).unwrap());
        assert!(s.instruction.contains("indoor activities"));
        assert!(s.instruction.contains("a person opens a door"));
        assert_eq!(
            s.ground_truth,
            GroundTruth::SingleInterval {
                interval: TimeInterval::new(10.0, 20.0).unwrap()
            }
        );
    }

    #[test]
    fn eca_answer_points_at_ground_truth_option() {
        let s = kept(build_sample(&ann(&[(10.0, 20.0)]), TaskKind::ECA, &[], 3).unwrap());
        let GroundTruth::McqAnswer { answer } = s.ground_truth else {
            panic!()
        };
        assert!(s.instruction.contains(&format!("({answer}) 10.0s - 20.0s")));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ann(&[(10.0, 20.0)]);
        for task in [TaskKind::ECA, TaskKind::RVQ, TaskKind::EPM, TaskKind::GVQ] {
            let x = build_sample(&a, task, &[], 11).unwrap();
            let y = build_sample(&a, task, &[], 11).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn rvq_unanswerable_rate_is_about_a_fifth() {
        let mut unable = 0;
        for i in 0..2000 {
            let mut a = ann(&[(10.0, 20.0)]);
            a.id = format!("q{i}");
            let s = kept(build_sample(&a, TaskKind::RVQ, &[], 1).unwrap());
            if s.ground_truth
                == (GroundTruth::McqAnswer {
                    answer: OptionLetter::new('E').unwrap(),
                })
            {
                unable += 1;
            }
        }
        let rate = unable as f64 / 2000.0;
        assert!((rate - 0.2).abs() < 0.03, "{rate}");
    }

    #[test]
    fn epm_crops_long_videos() {
        let mut a = ann(&[(500.0, 520.0)]);
        a.duration = 900.0;
        let s = kept(build_sample(&a, TaskKind::EPM, &[], 2).unwrap());
        assert_eq!(s.duration, 300.0);
        assert!(s.video.starts_with("v1.mp4#t="));
        let GroundTruth::SingleInterval { interval } = s.ground_truth else {
            panic!()
        };
        assert!((interval.duration() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn filters_drop_with_rule_id() {
        let a = ann(&[(10.0, 20.0)]);
        let rules = [FilterRule::DurationRange {
            min: 200.0,
            max: 600.0,
        }];
        assert_eq!(
            build_sample(&a, TaskKind::TVG, &rules, 0).unwrap(),
            GenOutcome::Dropped("duration_range")
        );
    }

    #[test]
    fn missing_fields_are_reported() {
        let mut a = ann(&[(10.0, 20.0)]);
        a.query = None;
        let err = build_sample(&a, TaskKind::TVG, &[], 0).unwrap_err();
        assert!(err.to_string().contains("`query`"));
        let err = build_sample(&ann(&[]), TaskKind::TAL, &[], 0).unwrap_err();
        assert!(err.to_string().contains("`events`"));
    }

    #[test]
    fn out_of_range_events_are_clamped() {
        let s = kept(build_sample(&ann(&[(90.0, 120.0)]), TaskKind::TVG, &[], 0).unwrap());
        assert_eq!(
            s.ground_truth,
            GroundTruth::SingleInterval {
                interval: TimeInterval::new(90.0, 100.0).unwrap()
            }
        );
    }
}
