//! Aggregation of score records into sub-task, task and capability tables.
//!
//! Sample scores are averaged within each (task, source) pair, source means
//! are averaged without weights into task means, and capability scores average
//! their task means. Values stay in [0, 1] at full precision; they are scaled
//! to percentages and rounded only when emitted.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::domain::{Sample, ScoreRecord, TaskKind};
use crate::scoring::{keys, primary_metric};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("score record for unknown sample `{0}`")]
    UnknownSample(String),
    #[error("unknown format `{0}` (expected markdown or csv)")]
    UnknownFormat(String),
    #[error("unknown section `{0}` (expected tasks, capabilities, sources or thresholds)")]
    UnknownSection(String),
}

/// Capability-level aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CapabilityScore {
    AccRef,
    F1Gnd,
    F1Cap,
    SimCap,
    RecCom,
}

impl CapabilityScore {
    pub const ALL: [CapabilityScore; 5] = [
        CapabilityScore::AccRef,
        CapabilityScore::F1Gnd,
        CapabilityScore::F1Cap,
        CapabilityScore::SimCap,
        CapabilityScore::RecCom,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CapabilityScore::AccRef => "Acc_ref",
            CapabilityScore::F1Gnd => "F1_gnd",
            CapabilityScore::F1Cap => "F1_cap",
            CapabilityScore::SimCap => "Sim_cap",
            CapabilityScore::RecCom => "Rec_com",
        }
    }

    /// The (task, metric) cells this aggregate averages.
    pub fn constituents(self) -> Vec<(TaskKind, &'static str)> {
        use TaskKind::*;
        match self {
            CapabilityScore::AccRef => vec![(RAR, keys::ACC), (ECA, keys::ACC), (RVQ, keys::ACC)],
            CapabilityScore::F1Gnd => [TVG, EPM, TAL, EVS, VHD].map(|t| (t, keys::F1)).to_vec(),
            CapabilityScore::F1Cap => vec![(DVC, keys::F1), (SLC, keys::F1)],
            CapabilityScore::SimCap => vec![(DVC, keys::SIM), (SLC, keys::SIM)],
            CapabilityScore::RecCom => vec![(TEM, keys::RECALL), (GVQ, keys::RECALL)],
        }
    }
}

/// Main-table columns, in the published layout.
pub const TABLE_COLUMNS: [(TaskKind, &str, &str); 14] = [
    (TaskKind::RAR, keys::ACC, "RAR Acc"),
    (TaskKind::ECA, keys::ACC, "ECA Acc"),
    (TaskKind::RVQ, keys::ACC, "RVQ Acc"),
    (TaskKind::TVG, keys::F1, "TVG F1"),
    (TaskKind::EPM, keys::F1, "EPM F1"),
    (TaskKind::TAL, keys::F1, "TAL F1"),
    (TaskKind::EVS, keys::F1, "EVS F1"),
    (TaskKind::VHD, keys::F1, "VHD F1"),
    (TaskKind::DVC, keys::F1, "DVC F1"),
    (TaskKind::DVC, keys::SIM, "DVC Sim"),
    (TaskKind::SLC, keys::F1, "SLC F1"),
    (TaskKind::SLC, keys::SIM, "SLC Sim"),
    (TaskKind::TEM, keys::RECALL, "TEM Rec"),
    (TaskKind::GVQ, keys::RECALL, "GVQ Rec"),
];

type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateReport {
    pub sources: BTreeMap<(TaskKind, String), MetricMap>,
    pub tasks: BTreeMap<TaskKind, MetricMap>,
    pub capabilities: BTreeMap<CapabilityScore, f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl AggregateReport {
    /// Builds the report from records tagged with their task and source.
    pub fn from_tagged<'a>(
        records: impl IntoIterator<Item = (TaskKind, &'a str, &'a ScoreRecord)>,
    ) -> Self {
        let mut sums: BTreeMap<(TaskKind, String), BTreeMap<String, (f64, usize)>> =
            BTreeMap::new();
        for (task, source, rec) in records {
            let slot = sums.entry((task, source.to_owned())).or_default();
            for (k, v) in &rec.metrics {
                let e = slot.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let sources: BTreeMap<_, MetricMap> = sums
            .into_iter()
            .map(|(key, m)| {
                (
                    key,
                    m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
                )
            })
            .collect();

        let mut per_task: BTreeMap<TaskKind, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for ((task, _), m) in &sources {
            for (k, v) in m {
                per_task
                    .entry(*task)
                    .or_default()
                    .entry(k.clone())
                    .or_default()
                    .push(*v);
            }
        }
        let tasks: BTreeMap<_, MetricMap> = per_task
            .into_iter()
            .map(|(t, m)| {
                (
                    t,
                    m.into_iter()
                        .filter_map(|(k, v)| mean(v).map(|x| (k, x)))
                        .collect(),
                )
            })
            .collect();

        let capabilities = CapabilityScore::ALL
            .iter()
            .filter_map(|&c| {
                mean(
                    c.constituents()
                        .into_iter()
                        .filter_map(|(t, k)| tasks.get(&t).and_then(|m| m.get(k)).copied()),
                )
                .map(|v| (c, v))
            })
            .collect();
        AggregateReport {
            sources,
            tasks,
            capabilities,
        }
    }

    pub fn task_metric(&self, task: TaskKind, metric: &str) -> Option<f64> {
        self.tasks.get(&task).and_then(|m| m.get(metric)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Joins records with the manifest and aggregates them.
pub fn aggregate(
    records: &[ScoreRecord],
    manifest: &[Sample],
) -> Result<AggregateReport, ReportError> {
    let by_id: HashMap<&str, &Sample> = manifest.iter().map(|s| (s.id.as_str(), s)).collect();
    let tagged = records
        .iter()
        .map(|r| {
            by_id
                .get(r.sample_id.as_str())
                .map(|s| (s.task, s.source.as_str(), r))
                .ok_or_else(|| ReportError::UnknownSample(r.sample_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggregateReport::from_tagged(tagged))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub task: TaskKind,
    pub metric: &'static str,
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl ThresholdRow {
    pub fn mean(&self) -> f64 {
        mean(self.values.iter().copied()).unwrap_or(0.0)
    }
}

/// Per-threshold task means (e.g. `f1@0.1` … `f1@0.7`), ordered by threshold.
/// `None` when the task has no threshold-keyed metrics.
pub fn per_threshold_table(report: &AggregateReport, task: TaskKind) -> Option<ThresholdRow> {
    let metric = primary_metric(task);
    let prefix = format!("{metric}@");
    let mut cells: Vec<(f64, f64)> = report
        .tasks
        .get(&task)?
        .iter()
        .filter_map(|(k, v)| Some((k.strip_prefix(&prefix)?.parse::<f64>().ok()?, *v)))
        .collect();
    if cells.is_empty() {
        return None;
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(ThresholdRow {
        task,
        metric,
        thresholds: cells.iter().map(|c| c.0).collect(),
        values: cells.iter().map(|c| c.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            _ => Err(ReportError::UnknownFormat(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Section {
    #[default]
    Tasks,
    Capabilities,
    Sources,
    Thresholds,
}

impl FromStr for Section {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tasks" => Ok(Section::Tasks),
            "capabilities" => Ok(Section::Capabilities),
            "sources" => Ok(Section::Sources),
            "thresholds" => Ok(Section::Thresholds),
            _ => Err(ReportError::UnknownSection(s.to_owned())),
        }
    }
}

/// Percentage with one decimal; `--` for missing cells.
pub fn percent(v: Option<f64>) -> String {
    match v {
        None => "--".into(),
        Some(v) => {
            // Absorb representation error so that e.g. 38.65 rounds up.
            let tenths = (v * 1000.0 + 1e-7_f64.copysign(v)).round();
            format!("{:.1}", tenths / 10.0)
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Markdown => {
                let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
                out.push_str(&line(&self.header));
                out.push_str(&line(&vec!["---".to_owned(); self.header.len()]));
                for r in &self.rows {
                    out.push_str(&line(r));
                }
            }
            Format::Csv => {
                let esc = |c: &String| {
                    if c.contains([',', '"', '\n']) {
                        format!("\"{}\"", c.replace('"', "\"\""))
                    } else {
                        c.clone()
                    }
                };
                for r in std::iter::once(&self.header).chain(&self.rows) {
                    let _ = writeln!(out, "{}", r.iter().map(esc).collect::<Vec<_>>().join(","));
                }
            }
        }
        out
    }
}

fn strings<'a>(it: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    it.into_iter().map(str::to_owned).collect()
}

/// Renders one section; `label` names the evaluated model in the row header.
pub fn emit(report: &AggregateReport, section: Section, format: Format, label: &str) -> String {
    let table = match section {
        Section::Tasks => Table {
            header: strings(std::iter::once("Model").chain(TABLE_COLUMNS.iter().map(|c| c.2))),
            rows: if report.is_empty() {
                vec![]
            } else {
                vec![std::iter::once(label.to_owned())
                    .chain(
                        TABLE_COLUMNS
                            .iter()
                            .map(|(t, k, _)| percent(report.task_metric(*t, k))),
                    )
                    .collect()]
            },
        },
        Section::Capabilities => Table {
            header: strings(
                std::iter::once("Model").chain(CapabilityScore::ALL.iter().map(|c| c.label())),
            ),
            rows: if report.is_empty() {
                vec![]
            } else {
                vec![std::iter::once(label.to_owned())
                    .chain(
                        CapabilityScore::ALL
                            .iter()
                            .map(|c| percent(report.capabilities.get(c).copied())),
                    )
                    .collect()]
            },
        },
        Section::Sources => Table {
            header: strings(["Task", "Source", "Metric", "Value"]),
            rows: report
                .sources
                .iter()
                .flat_map(|((task, source), m)| {
                    let primary = primary_metric(*task);
                    let mut names = vec![primary];
                    if m.contains_key(keys::SIM) {
                        names.push(keys::SIM);
                    }
                    names
                        .into_iter()
                        .map(|k| {
                            vec![
                                task.to_string(),
                                source.clone(),
                                k.to_owned(),
                                percent(m.get(k).copied()),
                            ]
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
        },
        Section::Thresholds => {
            let rows: Vec<ThresholdRow> = TaskKind::ALL
                .iter()
                .filter_map(|&t| per_threshold_table(report, t))
                .collect();
            let thresholds = rows
                .first()
                .map(|r| r.thresholds.clone())
                .unwrap_or_default();
            let mut header = strings(["Task", "Metric"]);
            header.extend(thresholds.iter().map(|t| format!("@{t}")));
            header.push("Mean".into());
            Table {
                header,
                rows: rows
                    .iter()
                    .map(|r| {
                        let mut cells = vec![r.task.to_string(), r.metric.to_owned()];
                        cells.extend(thresholds.iter().map(|t| {
                            percent(
                                r.thresholds
                                    .iter()
                                    .position(|x| x == t)
                                    .map(|i| r.values[i]),
                            )
                        }));
                        cells.push(percent(Some(r.mean())));
                        cells
                    })
                    .collect(),
            }
        }
    };
    table.render(format)
}
