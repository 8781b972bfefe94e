//! Instruction and canonical-response rendering.
//!
//! Instruction text lives in a versioned JSON corpus (`data/templates.v1.json`)
//! mapping `"<family>/<TASK>/<variant>"` to a template string with `{name}`
//! placeholders. List placeholders are `{options}` (rendered as
//! `(A) .. (B) ..`) and indexed times `{times[i]}` (rendered with
//! [`format_time`]).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{GroundTruth, OptionLetter, TaskKind, TimeInterval};

const BUILTIN_CORPUS: &str = include_str!("../data/templates.v1.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("missing placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("no template `{0}`")]
    UnknownTemplate(TemplateId),
    #[error("template `{key}` uses unknown placeholder `{name}`")]
    UnknownPlaceholder { key: String, name: String },
    #[error("bad template key `{0}`")]
    BadKey(String),
    #[error("template corpus is not valid JSON: {0}")]
    Corpus(String),
    #[error("ground truth `{gt}` does not fit task {task}")]
    VariantMismatch { task: TaskKind, gt: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateFamily {
    /// Benchmark instructions, one per task.
    Bench,
    /// Instruction-tuning variants, six per supported task.
    Tune,
}

impl TemplateFamily {
    fn as_str(self) -> &'static str {
        match self {
            TemplateFamily::Bench => "bench",
            TemplateFamily::Tune => "tune",
        }
    }
}

impl FromStr for TemplateFamily {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bench" => Ok(TemplateFamily::Bench),
            "tune" => Ok(TemplateFamily::Tune),
            _ => Err(TemplateError::BadKey(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateId {
    pub family: TemplateFamily,
    pub task: TaskKind,
    pub variant: usize,
}

impl TemplateId {
    pub fn bench(task: TaskKind) -> Self {
        TemplateId {
            family: TemplateFamily::Bench,
            task,
            variant: 0,
        }
    }

    pub fn tune(task: TaskKind, variant: usize) -> Self {
        TemplateId {
            family: TemplateFamily::Tune,
            task,
            variant,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.family.as_str(), self.task, self.variant)
    }
}

impl FromStr for TemplateId {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TemplateError::BadKey(s.to_string());
        let mut parts = s.split('/');
        let (Some(fam), Some(task), Some(var), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        Ok(TemplateId {
            family: fam.parse()?,
            task: task.parse().map_err(|_| bad())?,
            variant: var.parse().map_err(|_| bad())?,
        })
    }
}

/// Values substituted into a template. Fields a template does not use are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Placeholders {
    pub query: Option<String>,
    pub question: Option<String>,
    pub action: Option<String>,
    pub task: Option<String>,
    pub domain: Option<String>,
    pub options: Vec<String>,
    pub times: Vec<f64>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z]+)(?:\[(\d+)\])?\}").unwrap())
}

const SCALAR_NAMES: [&str; 5] = ["query", "question", "action", "task", "domain"];

/// One decimal place, no unit.
pub fn format_time(t: f64) -> String {
    format!("{t:.1}")
}

/// Renders an interval option such as `12.0s - 15.5s` (used by ECA options).
pub fn interval_option(iv: &TimeInterval) -> String {
    format!("{}s - {}s", format_time(iv.start()), format_time(iv.end()))
}

/// Phrase substituted for `{domain}` in benchmark templates, keyed by the
/// task and source dataset tag.
///
/// | task | source | phrase |
/// |------|--------|--------|
/// | TVG | `charades_sta` | indoor activities |
/// | TVG | other | daily activities |
/// | VHD | `youtube_highlights` | its domain |
/// | VHD | other | the sentence |
/// | TEM | `perception_test` | containing a series of actions |
/// | TEM | other | about daily activities |
///
/// EVS uses the video's own domain label, so it has no fixed phrase.
pub fn domain_phrase(task: TaskKind, source: &str) -> Option<&'static str> {
    match (task, source) {
        (TaskKind::TVG, "charades_sta") => Some("indoor activities"),
        (TaskKind::TVG, _) => Some("daily activities"),
        (TaskKind::VHD, "youtube_highlights") => Some("its domain"),
        (TaskKind::VHD, _) => Some("the sentence"),
        (TaskKind::TEM, "perception_test") => Some("containing a series of actions"),
        (TaskKind::TEM, _) => Some("about daily activities"),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct TemplateCorpus {
    templates: BTreeMap<TemplateId, String>,
}

impl TemplateCorpus {
    /// The corpus shipped with the crate.
    pub fn builtin() -> &'static TemplateCorpus {
        static CORPUS: OnceLock<TemplateCorpus> = OnceLock::new();
        CORPUS.get_or_init(|| {
            TemplateCorpus::from_json(BUILTIN_CORPUS).expect("builtin template corpus is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| TemplateError::Corpus(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (key, body) in raw {
            let id: TemplateId = key.parse()?;
            for cap in placeholder_re().captures_iter(&body) {
                let name = &cap[1];
                let indexed = cap.get(2).is_some();
                let known = match name {
                    "options" => !indexed,
                    "times" => indexed,
                    n => !indexed && SCALAR_NAMES.contains(&n),
                };
                if !known {
                    return Err(TemplateError::UnknownPlaceholder {
                        key,
                        name: cap[0].to_string(),
                    });
                }
            }
            templates.insert(id, body);
        }
        Ok(TemplateCorpus { templates })
    }

    pub fn get(&self, id: TemplateId) -> Option<&str> {
        self.templates.get(&id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = TemplateId> + '_ {
        self.templates.keys().copied()
    }

    pub fn variants(&self, family: TemplateFamily, task: TaskKind) -> usize {
        self.templates
            .keys()
            .filter(|id| id.family == family && id.task == task)
            .count()
    }

    pub fn render_instruction(
        &self,
        id: TemplateId,
        ph: &Placeholders,
    ) -> Result<String, TemplateError> {
        let body = self.get(id).ok_or(TemplateError::UnknownTemplate(id))?;
        let mut out = String::with_capacity(body.len() + 64);
        let mut last = 0;
        for cap in placeholder_re().captures_iter(body) {
            let whole = cap.get(0).unwrap();
            out.push_str(&body[last..whole.start()]);
            last = whole.end();
            let name = &cap[1];
            let missing = || TemplateError::MissingPlaceholder(name.to_string());
            match name {
                "options" => {
                    if ph.options.is_empty() {
                        return Err(missing());
                    }
                    out.push_str(&render_options(&ph.options));
                }
                "times" => {
                    let i: usize = cap[2].parse().map_err(|_| missing())?;
                    let t = ph
                        .times
                        .get(i)
                        .ok_or_else(|| TemplateError::MissingPlaceholder(format!("times[{i}]")))?;
                    out.push_str(&format_time(*t));
                }
                _ => {
                    let v = match name {
                        "query" => &ph.query,
                        "question" => &ph.question,
                        "action" => &ph.action,
                        "task" => &ph.task,
                        "domain" => &ph.domain,
                        _ => unreachable!("validated at load"),
                    };
                    out.push_str(v.as_deref().ok_or_else(missing)?);
                }
            }
        }
        out.push_str(&body[last..]);
        Ok(out)
    }
}

/// Renders with the builtin corpus.
pub fn render_instruction(id: TemplateId, ph: &Placeholders) -> Result<String, TemplateError> {
    TemplateCorpus::builtin().render_instruction(id, ph)
}

fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let l = OptionLetter::from_index(i)
                .map(|l| l.as_char())
                .unwrap_or('?');
            format!("({l}) {o}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pair(iv: &TimeInterval) -> String {
    format!("{} - {}", format_time(iv.start()), format_time(iv.end()))
}

/// `x`, `x and y`, `x, y, and z`.
fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Canonical response text for a ground truth. Highlight regions render as
/// the midpoint of the first region.
pub fn render_response(task: TaskKind, gt: &GroundTruth) -> Result<String, TemplateError> {
    if !gt.matches_task(task) {
        return Err(TemplateError::VariantMismatch {
            task,
            gt: gt.kind_name(),
        });
    }
    let text = match gt {
        GroundTruth::McqAnswer { answer } => format!("Best Option: ({answer})"),
        GroundTruth::SingleInterval { interval } => {
            format!("The event happens in {} seconds.", pair(interval))
        }
        GroundTruth::IntervalSet { intervals } => {
            let list = join_list(&intervals.iter().map(pair).collect::<Vec<_>>());
            match task {
                TaskKind::TAL => format!("The action happens in {list} seconds."),
                TaskKind::EVS => format!("The summary locates in {list} seconds."),
                // TEM answers with a single moment: the first matching event.
                _ => format!(
                    "The similar event happens in {} seconds.",
                    intervals.first().map(pair).unwrap_or_default()
                ),
            }
        }
        GroundTruth::HighlightRegions { regions } => {
            let t = regions.first().map(|r| r.midpoint()).unwrap_or(0.0);
            format!(
                "The highlight moment happens at {} seconds.",
                format_time(t)
            )
        }
        GroundTruth::CaptionedSegments { segments } => segments
            .iter()
            .map(|s| format!("{} seconds, {}", pair(&s.interval), s.caption))
            .collect::<Vec<_>>()
            .join(" "),
        GroundTruth::GroundedMcq { answer, interval } => format!(
            "Best Option: ({answer}). The relevant event happens in {} seconds.",
            pair(interval)
        ),
    };
    Ok(text)
}
