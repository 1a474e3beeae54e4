//! Answer matching, accuracy reports, and the ablation/sweep runners.
//!
//! Three matchers are available:
//!
//! * `vqa_score`: `min(#matching gold annotations / 3, 1)`. The gold list is
//!   read as one entry per human annotator.
//! * `relaxed_match`: 1 if the normalized prediction equals any normalized
//!   gold alias.
//! * `numeric_range`: 1 if the first decimal literal in the prediction lies in
//!   the closed gold interval.
//!
//! `auto` picks `relaxed_match` for string gold answers and `numeric_range`
//! for interval answers. Normalization lowercases, deletes Unicode
//! punctuation, strips leading articles and collapses whitespace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::kb::{QueryRecord, Retriever};
use crate::pipeline::{self, PipelineConfig, PipelineError, QueryTrace, StageFlags};
use crate::tokens::{MctStrategy, SrtSelectionMode};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no traces")]
    NoTraces,
    #[error("trace for unknown query {0}")]
    MissingQuery(String),
    #[error("matcher {kind:?} cannot judge query {query_id}: {reason}")]
    MatcherMismatch {
        kind: MatcherKind,
        query_id: String,
        reason: &'static str,
    },
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    #[default]
    Auto,
    VqaScore,
    RelaxedMatch,
    NumericRange,
}

impl std::str::FromStr for MatcherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(MatcherKind::Auto),
            "vqa_score" => Ok(MatcherKind::VqaScore),
            "relaxed_match" => Ok(MatcherKind::RelaxedMatch),
            "numeric_range" => Ok(MatcherKind::NumericRange),
            _ => Err(format!(
                "unknown matcher {s:?} (auto, vqa_score, relaxed_match, numeric_range)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub strip_articles: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            strip_articles: true,
        }
    }
}

impl Normalization {
    pub fn apply(&self, text: &str) -> String {
        static PUNCT: OnceLock<Regex> = OnceLock::new();
        let mut s = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        if self.strip_punctuation {
            let re = PUNCT.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"));
            s = re.replace_all(&s, "").into_owned();
        }
        let mut words: Vec<&str> = s.split_whitespace().collect();
        if self.strip_articles {
            let leading = words
                .iter()
                .take_while(|w| matches!(w.to_lowercase().as_str(), "a" | "an" | "the"))
                .count();
            words.drain(..leading);
        }
        words.join(" ")
    }
}

/// Full credit counts as correct; partial VQA credit does not.
pub fn is_correct(score: f64) -> bool {
    score >= 1.0
}

/// First decimal literal in `text`.
pub fn first_number(text: &str) -> Option<f64> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("valid regex"));
    re.find(text).and_then(|m| m.as_str().parse().ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Matcher {
    pub kind: MatcherKind,
    pub normalization: Normalization,
}

impl Matcher {
    pub fn new(kind: MatcherKind) -> Self {
        Self {
            kind,
            normalization: Normalization::default(),
        }
    }

    /// Score in `[0, 1]`. Empty predictions score 0.
    pub fn judge(&self, prediction: &str, query: &QueryRecord) -> Result<f64, EvalError> {
        let kind = match self.kind {
            MatcherKind::Auto if query.answer_range.is_some() => MatcherKind::NumericRange,
            MatcherKind::Auto => MatcherKind::RelaxedMatch,
            k => k,
        };
        let mismatch = |reason| EvalError::MatcherMismatch {
            kind,
            query_id: query.query_id.clone(),
            reason,
        };
        if prediction.trim().is_empty() {
            return Ok(0.0);
        }
        match kind {
            MatcherKind::NumericRange => {
                let [lo, hi] = query.answer_range.ok_or_else(|| mismatch("no answer_range"))?;
                Ok(match first_number(prediction) {
                    Some(x) if lo <= x && x <= hi => 1.0,
                    _ => 0.0,
                })
            }
            MatcherKind::VqaScore | MatcherKind::RelaxedMatch => {
                let gold = query
                    .gold_answers
                    .as_ref()
                    .ok_or_else(|| mismatch("no gold_answers"))?;
                let pred = self.normalization.apply(prediction);
                let matches = gold
                    .iter()
                    .filter(|g| self.normalization.apply(g) == pred)
                    .count();
                Ok(if kind == MatcherKind::VqaScore {
                    (matches as f64 / 3.0).min(1.0)
                } else if matches > 0 {
                    1.0
                } else {
                    0.0
                })
            }
            MatcherKind::Auto => unreachable!("resolved above"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    pub matcher: MatcherKind,
    pub splits: BTreeMap<String, SplitStats>,
    pub overall: f64,
    pub count: usize,
    pub failed: usize,
}

/// Splits a query without tags falls into.
pub const UNTAGGED_SPLIT: &str = "untagged";

/// Accuracy per split tag and overall, re-judging every trace's answer.
/// A query carrying several tags counts towards each of them.
pub fn evaluate(
    traces: &[QueryTrace],
    queries: &[QueryRecord],
    matcher: Matcher,
) -> Result<EvalReport, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::NoTraces);
    }
    let by_id: BTreeMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut sums: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    let mut failed = 0;
    for trace in traces {
        let query = by_id
            .get(trace.query_id.as_str())
            .ok_or_else(|| EvalError::MissingQuery(trace.query_id.clone()))?;
        let score = if trace.error.is_some() {
            failed += 1;
            0.0
        } else {
            matcher.judge(&trace.answer, query)?
        };
        total += score;
        let tags: Vec<&str> = if query.split_tags.is_empty() {
            vec![UNTAGGED_SPLIT]
        } else {
            query.split_tags.iter().map(String::as_str).collect()
        };
        for tag in tags {
            let entry = sums.entry(tag.to_string()).or_default();
            entry.0 += 1;
            entry.1 += score;
        }
    }
    let splits = sums
        .into_iter()
        .map(|(tag, (count, sum))| {
            (
                tag,
                SplitStats {
                    count,
                    accuracy: sum / count as f64,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        report_schema: REPORT_SCHEMA,
        label: None,
        config: None,
        matcher: matcher.kind,
        splits,
        overall: total / traces.len() as f64,
        count: traces.len(),
        failed,
    })
}

/// One row of an ablation or sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub report_schema: u32,
    pub title: String,
    pub rows: Vec<TableRow>,
}

impl ReportTable {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table: one column per split plus overall, in percent.
    pub fn to_text(&self) -> String {
        let splits: Vec<String> = {
            let mut all: Vec<String> = self
                .rows
                .iter()
                .flat_map(|r| r.report.splits.keys().cloned())
                .collect();
            all.sort();
            all.dedup();
            all
        };
        let mut header = vec!["RET", "SRT", "MCT", "k"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend(splits.iter().cloned());
        header.push("All".into());
        let mut cells: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let config = row.report.config.clone().unwrap_or_default();
            let flags = config.stage_flags;
            let mark = |b: bool| if b { "x" } else { "" }.to_string();
            let mct = if flags.mct {
                config.mct_strategy.map_or("x".into(), |s| s.to_string())
            } else {
                String::new()
            };
            let k = if flags.srt {
                config.srt_mode.to_string()
            } else {
                config.k.to_string()
            };
            let mut line = vec![mark(flags.ret), mark(flags.srt), mct, k];
            for s in &splits {
                line.push(
                    row.report
                        .splits
                        .get(s)
                        .map_or("-".into(), |st| format!("{:.2}", st.accuracy * 100.0)),
                );
            }
            line.push(format!("{:.2}", row.report.overall * 100.0));
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }
}

fn run_row(
    label: String,
    config: PipelineConfig,
    queries: &[QueryRecord],
    retriever: &Retriever,
    gateway: &Gateway,
    parallelism: usize,
) -> Result<TableRow, EvalError> {
    log::info!("running {label}");
    let traces = pipeline::run_batch(queries, retriever, &config, gateway, parallelism)?;
    if let Some(t) = traces.iter().find(|t| t.is_unreachable()) {
        let message = t.error.as_ref().map_or_else(String::new, |e| e.message.clone());
        return Err(EvalError::BackendUnreachable(message));
    }
    let mut report = evaluate(&traces, queries, Matcher::new(config.matcher))?;
    report.label = Some(label.clone());
    report.config = Some(config);
    Ok(TableRow { label, report })
}

/// The six token combinations of the ablation, in order: none, RET, SRT,
/// RET+SRT, SRT+MCT, RET+SRT+MCT. Rows without SRT retrieve `base.k`
/// documents; rows with SRT use auto selection.
pub fn ablation_configs(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let strategy = base.mct_strategy.unwrap_or(MctStrategy::Rerank);
    [
        ("none", false, false, false),
        ("ret", true, false, false),
        ("srt", false, true, false),
        ("ret+srt", true, true, false),
        ("srt+mct", false, true, true),
        ("ret+srt+mct", true, true, true),
    ]
    .into_iter()
    .map(|(label, ret, srt, mct)| {
        let mut config = base.clone();
        config.stage_flags = StageFlags { ret, srt, mct };
        config.srt_mode = SrtSelectionMode::Auto;
        config.mct_strategy = Some(strategy);
        (label.to_string(), config)
    })
    .collect()
}

pub fn run_ablation(
    queries: &[QueryRecord],
    retriever: &Retriever,
    gateway: &Gateway,
    base: &PipelineConfig,
    parallelism: usize,
) -> Result<ReportTable, EvalError> {
    let rows = ablation_configs(base)
        .into_iter()
        .map(|(label, config)| run_row(label, config, queries, retriever, gateway, parallelism))
        .collect::<Result<_, _>>()?;
    Ok(ReportTable {
        report_schema: REPORT_SCHEMA,
        title: "Ablation over token stages".into(),
        rows,
    })
}

/// A grid of sweep points.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// SRT selection sizes (retrieval always on, no MCT).
    SrtK(Vec<SrtSelectionMode>),
    /// MCT strategies crossed with selection sizes; rows grouped by size.
    MctGrid {
        strategies: Vec<MctStrategy>,
        ks: Vec<SrtSelectionMode>,
    },
}

impl Sweep {
    /// The selection sizes of the published sweeps: auto, 1, 5, 10, 15, 20.
    pub fn default_srt_ks() -> Vec<SrtSelectionMode> {
        std::iter::once(SrtSelectionMode::Auto)
            .chain([1, 5, 10, 15, 20].map(SrtSelectionMode::Fixed))
            .collect()
    }

    /// A fixed size `n` retrieves `n` documents and keeps all of them in SRT
    /// order; `auto` retrieves `base.k` and keeps those above 0.5.
    fn point(base: &PipelineConfig, mode: SrtSelectionMode, strategy: Option<MctStrategy>) -> PipelineConfig {
        let mut config = base.clone();
        config.srt_mode = mode;
        if let SrtSelectionMode::Fixed(n) = mode {
            config.k = n;
        }
        config.stage_flags = StageFlags {
            ret: false,
            srt: true,
            mct: strategy.is_some(),
        };
        if strategy.is_some() {
            config.mct_strategy = strategy;
        }
        config
    }

    pub fn configs(&self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        match self {
            Sweep::SrtK(ks) => ks
                .iter()
                .map(|&k| (format!("srt k={k}"), Self::point(base, k, None)))
                .collect(),
            Sweep::MctGrid { strategies, ks } => ks
                .iter()
                .flat_map(|&k| {
                    strategies
                        .iter()
                        .map(move |&s| (format!("{s} k={k}"), Self::point(base, k, Some(s))))
                })
                .collect(),
        }
    }
}

pub fn run_sweep(
    queries: &[QueryRecord],
    retriever: &Retriever,
    gateway: &Gateway,
    base: &PipelineConfig,
    sweep: &Sweep,
    parallelism: usize,
) -> Result<ReportTable, EvalError> {
    let rows = sweep
        .configs(base)
        .into_iter()
        .map(|(label, config)| run_row(label, config, queries, retriever, gateway, parallelism))
        .collect::<Result<_, _>>()?;
    let title = match sweep {
        Sweep::SrtK(_) => "Sweep over SRT selection size",
        Sweep::MctGrid { .. } => "Sweep over MCT strategy and selection size",
    };
    Ok(ReportTable {
        report_schema: REPORT_SCHEMA,
        title: title.into(),
        rows,
    })
}
