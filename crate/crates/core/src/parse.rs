//! Rule-based extraction of structured answers from free-text model responses.
//!
//! Every parser is total: arbitrary text yields either a value or a
//! [`FailureReason`], never a panic.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{
    clamp_interval, CaptionedSegment, FailureReason, OptionLetter, ParsedPrediction, TaskKind,
    TimeInterval,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseConfig {
    pub max_intervals: usize,
    pub clamp_to_duration: bool,
    /// Overrides the per-task letter set when present.
    pub mcq_letters: Option<Vec<OptionLetter>>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            max_intervals: 10,
            clamp_to_duration: true,
            mcq_letters: None,
        }
    }
}

impl ParseConfig {
    fn max_intervals(&self) -> usize {
        self.max_intervals.max(1)
    }

    fn letters_for(&self, task: TaskKind) -> &[OptionLetter] {
        self.mcq_letters.as_deref().unwrap_or(task.mcq_letters())
    }
}

// Plain decimals or clock times (m:ss, h:mm:ss).
const NUM: &str = r"(\d+(?::\d{1,2}){0,2}(?:\.\d+)?)";
const UNIT: &str = r"(?:\s*(?:seconds|second|secs|sec|s)\b)?";

fn pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let sep = r"\s*(?:[-‐‑–—~]|\bto\b)\s*";
        Regex::new(&format!(r"(?i)\b{NUM}{UNIT}{sep}{NUM}{UNIT}")).unwrap()
    })
}

fn best_option_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)best\s*option\s*[:：]?\s*\(?\s*([a-e])\b").unwrap())
}

fn paren_letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*([A-E])\s*\)").unwrap())
}

fn bare_letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-E])\b").unwrap())
}

fn at_time_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"(?i)\bat\s+(?:about\s+|around\s+)?{NUM}")).unwrap())
}

fn unit_time_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(r"(?i)\b{NUM}\s*(?:seconds|second|secs|sec|s)\b")).unwrap()
    })
}

/// Converts `12.5`, `1:23` or `1:02:03.5` to seconds.
fn to_seconds(token: &str) -> Option<f64> {
    let mut total = 0.0;
    for part in token.split(':') {
        let v: f64 = part.parse().ok()?;
        total = total * 60.0 + v;
    }
    total.is_finite().then_some(total)
}

fn parse_mcq_impl(text: &str, allowed: &[OptionLetter]) -> Option<OptionLetter> {
    let allowed_letter = |s: &str| {
        let c = s.chars().next()?;
        OptionLetter::new(c).ok().filter(|l| allowed.contains(l))
    };
    best_option_re()
        .captures_iter(text)
        .find_map(|c| allowed_letter(&c[1]))
        .or_else(|| {
            paren_letter_re()
                .captures_iter(text)
                .find_map(|c| allowed_letter(&c[1]))
        })
        .or_else(|| {
            bare_letter_re()
                .captures_iter(text)
                .find_map(|c| allowed_letter(&c[1]))
        })
}

/// Multiple-choice letter: `Best Option: (X)` first, then the first
/// parenthesized allowed letter, then the first standalone allowed letter.
pub fn parse_mcq(text: &str, allowed: &[OptionLetter]) -> Result<OptionLetter, FailureReason> {
    parse_mcq_impl(text, allowed).ok_or(FailureReason::NoChoice)
}

/// Time-pair matches with their byte spans, in textual order.
fn raw_pairs(text: &str) -> Vec<(std::ops::Range<usize>, f64, f64)> {
    pair_re()
        .captures_iter(text)
        .filter_map(|c| {
            let a = to_seconds(&c[1])?;
            let b = to_seconds(&c[2])?;
            Some((c.get(0).unwrap().range(), a, b))
        })
        .collect()
}

fn finish_interval(a: f64, b: f64, duration: f64, cfg: &ParseConfig) -> Option<TimeInterval> {
    let (a, b) = if cfg.clamp_to_duration {
        let c = clamp_interval(TimeInterval::unchecked(a, b), duration);
        (c.start(), c.end())
    } else {
        (a, b)
    };
    TimeInterval::new(a, b).ok()
}

/// All `a - b` time pairs, in textual order, clamped and truncated per `cfg`.
/// Pairs with `a > b` are dropped.
pub fn parse_intervals(
    text: &str,
    duration: f64,
    cfg: &ParseConfig,
) -> Result<Vec<TimeInterval>, FailureReason> {
    let out: Vec<TimeInterval> = raw_pairs(text)
        .into_iter()
        .filter_map(|(_, a, b)| finish_interval(a, b, duration, cfg))
        .take(cfg.max_intervals())
        .collect();
    if out.is_empty() {
        Err(FailureReason::NoIntervals)
    } else {
        Ok(out)
    }
}

/// A single instant, preferably the number after "at".
pub fn parse_point(text: &str, duration: f64) -> Result<f64, FailureReason> {
    at_time_re()
        .captures(text)
        .or_else(|| unit_time_re().captures(text))
        .and_then(|c| to_seconds(&c[1]))
        .map(|t| t.max(0.0).min(duration))
        .ok_or(FailureReason::NoPoint)
}

fn clean_caption(raw: &str) -> String {
    raw.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ':' | ';' | '-'))
        .trim_end()
        .to_string()
}

/// Captioned segments: each time pair anchors a segment whose caption runs
/// until the next pair.
pub fn parse_captioned(
    text: &str,
    duration: f64,
    cfg: &ParseConfig,
) -> Result<Vec<CaptionedSegment>, FailureReason> {
    let pairs = raw_pairs(text);
    let mut out = Vec::new();
    for (i, (span, a, b)) in pairs.iter().enumerate() {
        let next = pairs.get(i + 1).map_or(text.len(), |p| p.0.start);
        let Some(interval) = finish_interval(*a, *b, duration, cfg) else {
            continue;
        };
        out.push(CaptionedSegment {
            interval,
            caption: clean_caption(&text[span.end..next]),
        });
        if out.len() == cfg.max_intervals() {
            break;
        }
    }
    if out.is_empty() {
        Err(FailureReason::NoSegments)
    } else {
        Ok(out)
    }
}

/// Letter plus the first interval; both are required.
pub fn parse_grounded(
    text: &str,
    duration: f64,
    allowed: &[OptionLetter],
    cfg: &ParseConfig,
) -> Result<(OptionLetter, TimeInterval), FailureReason> {
    let letter = parse_mcq(text, allowed)?;
    let first = parse_intervals(text, duration, cfg)?[0];
    Ok((letter, first))
}

/// Dispatches to the parser for `task`. TVG, EPM and TEM keep only the first
/// interval.
pub fn parse_for_task(
    task: TaskKind,
    text: &str,
    duration: f64,
    cfg: &ParseConfig,
) -> ParsedPrediction {
    use TaskKind::*;
    let result = match task {
        RAR | ECA | RVQ => {
            parse_mcq(text, cfg.letters_for(task)).map(|answer| ParsedPrediction::Mcq { answer })
        }
        TVG | EPM | TEM => parse_intervals(text, duration, cfg)
            .map(|ivs| ParsedPrediction::Interval { interval: ivs[0] }),
        TAL | EVS => parse_intervals(text, duration, cfg)
            .map(|intervals| ParsedPrediction::Intervals { intervals }),
        VHD => parse_point(text, duration).map(|time| ParsedPrediction::Point { time }),
        DVC | SLC => parse_captioned(text, duration, cfg)
            .map(|segments| ParsedPrediction::Captioned { segments }),
        GVQ => parse_grounded(text, duration, cfg.letters_for(task), cfg)
            .map(|(answer, interval)| ParsedPrediction::Grounded { answer, interval }),
    };
    result.unwrap_or_else(|reason| ParsedPrediction::Failure { reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const AD: &[OptionLetter] = &[
        OptionLetter::ALL[0],
        OptionLetter::ALL[1],
        OptionLetter::ALL[2],
        OptionLetter::ALL[3],
    ];

    fn l(c: char) -> OptionLetter {
        OptionLetter::new(c).unwrap()
    }

    fn pairs(v: &[TimeInterval]) -> Vec<(f64, f64)> {
        v.iter().map(|i| (i.start(), i.end())).collect()
    }

    #[test]
    fn mcq_examples() {
        assert_eq!(parse_mcq("Best Option: (A)", AD), Ok(l('A')));
        assert_eq!(
            parse_mcq("I think the answer is (C) because…", AD),
            Ok(l('C'))
        );
        assert_eq!(
            parse_mcq("The video shows cooking.", AD),
            Err(FailureReason::NoChoice)
        );
    }

    #[test]
    fn mcq_canonical_beats_earlier_parenthesized_letter() {
        assert_eq!(parse_mcq("Not (B). best option:  ( d )", AD), Ok(l('D')));
        assert_eq!(parse_mcq("Best Option: C", AD), Ok(l('C')));
    }

    #[test]
    fn mcq_respects_allowed_set() {
        assert_eq!(
            parse_mcq("Best Option: (E)", AD),
            Err(FailureReason::NoChoice)
        );
        assert_eq!(
            parse_mcq("Best Option: (E)", &OptionLetter::ALL),
            Ok(l('E'))
        );
        assert_eq!(parse_mcq("(E) no, I pick B", AD), Ok(l('B')));
    }

    #[test]
    fn interval_examples() {
        let cfg = ParseConfig::default();
        let text =
            "The action happens in 4.2 - 6.8, 7.5 - 10.3, 15.1 - 18.6, and 23.4 - 27.5 seconds";
        assert_eq!(
            pairs(&parse_intervals(text, 60.0, &cfg).unwrap()),
            vec![(4.2, 6.8), (7.5, 10.3), (15.1, 18.6), (23.4, 27.5)]
        );
        assert_eq!(
            pairs(
                &parse_intervals("The event happens in 10.2 - 12.8 seconds", 60.0, &cfg).unwrap()
            ),
            vec![(10.2, 12.8)]
        );
        assert_eq!(
            pairs(&parse_intervals("happens in 90 - 102 seconds", 95.0, &cfg).unwrap()),
            vec![(90.0, 95.0)]
        );
    }

    #[test]
    fn interval_separators_and_clock_times() {
        let cfg = ParseConfig::default();
        let got =
            parse_intervals("from 1:23 to 1:30.5, then 5s–7s and 8 — 9", 200.0, &cfg).unwrap();
        assert_eq!(pairs(&got), vec![(83.0, 90.5), (5.0, 7.0), (8.0, 9.0)]);
    }

    #[test]
    fn reversed_pairs_dropped_valid_kept() {
        let cfg = ParseConfig::default();
        let got = parse_intervals("20 - 10 and 3 - 4", 60.0, &cfg).unwrap();
        assert_eq!(pairs(&got), vec![(3.0, 4.0)]);
        assert_eq!(
            parse_intervals("20 - 10", 60.0, &cfg),
            Err(FailureReason::NoIntervals)
        );
    }

    #[test]
    fn intervals_truncate_to_max() {
        let cfg = ParseConfig {
            max_intervals: 2,
            ..Default::default()
        };
        let got = parse_intervals("1 - 2, 3 - 4, 5 - 6", 60.0, &cfg).unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn point_examples() {
        assert_eq!(
            parse_point("The highlight moment happens at 26.8 seconds", 60.0),
            Ok(26.8)
        );
        assert_eq!(parse_point("at 0 seconds", 60.0), Ok(0.0));
        assert_eq!(parse_point("no idea", 60.0), Err(FailureReason::NoPoint));
        assert_eq!(parse_point("around 12 seconds in", 60.0), Ok(12.0));
        assert_eq!(parse_point("at 99", 60.0), Ok(60.0));
    }

    #[test]
    fn captioned_examples() {
        let cfg = ParseConfig::default();
        let text = "90 - 102 seconds, spread margarine on two slices of white bread. 114 - 127 seconds, place a slice of cheese on the bread.";
        let got = parse_captioned(text, 200.0, &cfg).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(
            (got[0].interval.start(), got[0].interval.end()),
            (90.0, 102.0)
        );
        assert_eq!(
            got[0].caption,
            "spread margarine on two slices of white bread."
        );
        assert_eq!(
            (got[1].interval.start(), got[1].interval.end()),
            (114.0, 127.0)
        );
        assert_eq!(got[1].caption, "place a slice of cheese on the bread.");

        let got = parse_captioned(
            "24.8 - 30.2 seconds, cut apple. 35.6 - 40.4 seconds, wash dishes.",
            60.0,
            &cfg,
        )
        .unwrap();
        let caps: Vec<_> = got.iter().map(|s| s.caption.as_str()).collect();
        assert_eq!(caps, vec!["cut apple.", "wash dishes."]);

        let got = parse_captioned("5 - 10,", 20.0, &cfg).unwrap();
        assert_eq!(got[0].caption, "");
        assert_eq!(
            parse_captioned("nothing", 20.0, &cfg),
            Err(FailureReason::NoSegments)
        );
    }

    #[test]
    fn grounded_examples() {
        let cfg = ParseConfig::default();
        let (a, iv) = parse_grounded(
            "Best Option: (C). The relevant event happens in 12.0 - 15.5 seconds",
            150.0,
            AD,
            &cfg,
        )
        .unwrap();
        assert_eq!(a, l('C'));
        assert_eq!((iv.start(), iv.end()), (12.0, 15.5));
        assert_eq!(
            parse_grounded("Best Option: (B).", 150.0, AD, &cfg),
            Err(FailureReason::NoIntervals)
        );
        assert_eq!(
            parse_grounded(
                "The relevant event happens in 1 - 2 seconds",
                150.0,
                AD,
                &cfg
            ),
            Err(FailureReason::NoChoice)
        );
    }

    #[test]
    fn dispatch_first_vs_all() {
        let cfg = ParseConfig::default();
        let text = "The action happens in 4.2 - 6.8, 7.5 - 10.3 seconds";
        match parse_for_task(TaskKind::TVG, text, 60.0, &cfg) {
            ParsedPrediction::Interval { interval } => assert_eq!(interval.start(), 4.2),
            other => panic!("{other:?}"),
        }
        match parse_for_task(TaskKind::TAL, text, 60.0, &cfg) {
            ParsedPrediction::Intervals { intervals } => assert_eq!(intervals.len(), 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_for_task(TaskKind::RAR, "Best Option: (D)", 60.0, &cfg),
            ParsedPrediction::Mcq { answer: l('D') }
        );
        assert_eq!(
            parse_for_task(TaskKind::VHD, "???", 60.0, &cfg),
            ParsedPrediction::Failure {
                reason: FailureReason::NoPoint
            }
        );
    }

    proptest! {
        #[test]
        fn parsing_is_total_and_deterministic(bytes in proptest::collection::vec(any::<u8>(), 0..300), d in 0.1f64..1e4) {
            let text = String::from_utf8_lossy(&bytes);
            let cfg = ParseConfig::default();
            for task in TaskKind::ALL {
                let a = parse_for_task(task, &text, d, &cfg);
                prop_assert_eq!(&a, &parse_for_task(task, &text, d, &cfg));
            }
        }

        #[test]
        fn digit_soup_never_panics(text in "[0-9:.\\- to,s]{0,80}") {
            let cfg = ParseConfig::default();
            for task in TaskKind::ALL {
                let _ = parse_for_task(task, &text, 100.0, &cfg);
            }
        }

        #[test]
        fn order_is_preserved(starts in proptest::collection::vec(0u32..500, 1..8)) {
            let text = starts
                .iter()
                .map(|s| format!("{s} - {}", s + 3))
                .collect::<Vec<_>>()
                .join(", ");
            let got = parse_intervals(&text, 1000.0, &ParseConfig::default()).unwrap();
            let got: Vec<u32> = got.iter().map(|i| i.start() as u32).collect();
            prop_assert_eq!(got, starts);
        }
    }
}
