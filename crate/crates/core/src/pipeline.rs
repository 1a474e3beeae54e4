//! End-to-end query answering: gate, retrieve, rerank, refine, answer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, Matcher, MatcherKind};
use crate::gateway::{Gateway, GatewayError};
use crate::kb::{self, KbError, QueryRecord, RetrievalHit, Retriever, DEFAULT_TOP_K};
use crate::tokens::{
    self, ContextSet, MctStrategy, Provenance, RetDecision, RetLabel, ScoredDoc,
    SrtSelectionMode, TokenError, DEFAULT_GAMMA,
};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Which token stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub ret: bool,
    pub srt: bool,
    pub mct: bool,
}

impl StageFlags {
    pub const NONE: StageFlags = StageFlags {
        ret: false,
        srt: false,
        mct: false,
    };
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            ret: true,
            srt: true,
            mct: true,
        }
    }
}

impl fmt::Display for StageFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = [(self.ret, "ret"), (self.srt, "srt"), (self.mct, "mct")]
            .into_iter()
            .filter_map(|(b, name)| b.then_some(name))
            .collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

impl FromStr for StageFlags {
    type Err = String;

    /// Comma-separated subset of `ret,srt,mct`, or `none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = StageFlags::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "ret" => flags.ret = true,
                "srt" => flags.srt = true,
                "mct" => flags.mct = true,
                "none" => {}
                other => return Err(format!("unknown stage {other:?} (ret, srt, mct, none)")),
            }
        }
        Ok(flags)
    }
}

/// Every tunable of the engine. Missing fields in a config file take the
/// defaults: γ = 0.5, k = 5, auto SRT selection, rerank MCT, all stages on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub gamma: f64,
    pub k: usize,
    pub srt_mode: SrtSelectionMode,
    pub mct_strategy: Option<MctStrategy>,
    /// Contamination percentage for consistency-training mixtures.
    pub tau_percent: f64,
    pub stage_flags: StageFlags,
    pub matcher: MatcherKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            k: DEFAULT_TOP_K,
            srt_mode: SrtSelectionMode::Auto,
            mct_strategy: Some(MctStrategy::Rerank),
            tau_percent: 0.0,
            stage_flags: StageFlags::default(),
            matcher: MatcherKind::Auto,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        tokens::validate_gamma(self.gamma).map_err(|e| e.to_string())?;
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.stage_flags.mct && !self.stage_flags.srt {
            return Err("MCT consumes the SRT selection; enable srt as well".into());
        }
        if self.stage_flags.mct && self.mct_strategy.is_none() {
            return Err("MCT enabled without mct_strategy".into());
        }
        if !(self.tau_percent.is_finite() && self.tau_percent >= 0.0) {
            return Err(format!("tau_percent must be >= 0, got {}", self.tau_percent));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let config: Self =
            serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Retrieval,
    BackendUnreachable,
    Backend,
    Config,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceError {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<TokenError> for TraceError {
    fn from(e: TokenError) -> Self {
        match e {
            TokenError::Gateway(g) => g.into(),
            other => TraceError {
                kind: ErrorKind::Config,
                message: other.to_string(),
            },
        }
    }
}

impl From<GatewayError> for TraceError {
    fn from(e: GatewayError) -> Self {
        let kind = match e {
            GatewayError::Unreachable(_) => ErrorKind::BackendUnreachable,
            _ => ErrorKind::Backend,
        };
        TraceError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<KbError> for TraceError {
    fn from(e: KbError) -> Self {
        TraceError {
            kind: ErrorKind::Retrieval,
            message: e.to_string(),
        }
    }
}

/// Per-query record of every stage that ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub trace_schema: u32,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ret_decision: Option<RetDecision>,
    pub retrieved: Vec<RetrievalHit>,
    pub srt_scores: Vec<ScoredDoc>,
    pub final_context: ContextSet,
    /// Empty only when the query failed (see `error`).
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TraceError>,
}

impl QueryTrace {
    pub fn is_unreachable(&self) -> bool {
        matches!(&self.error, Some(e) if e.kind == ErrorKind::BackendUnreachable)
    }

    fn new(query_id: &str) -> Self {
        Self {
            trace_schema: TRACE_SCHEMA,
            query_id: query_id.to_string(),
            ret_decision: None,
            retrieved: Vec::new(),
            srt_scores: Vec::new(),
            final_context: ContextSet::empty(Provenance::None),
            answer: String::new(),
            score: None,
            correct: None,
            error: None,
        }
    }
}

fn answer_query(
    trace: &mut QueryTrace,
    query: &QueryRecord,
    retriever: &Retriever,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<(), TraceError> {
    trace.ret_decision = tokens::gate(query, config, gateway)?;
    let skip_retrieval = matches!(
        trace.ret_decision,
        Some(RetDecision {
            label: RetLabel::NoRet,
            ..
        })
    );
    if !skip_retrieval {
        trace.retrieved = retriever.retrieve(query, config.k)?;
        let docs = retriever.documents(&trace.retrieved);
        let (scores, context) = tokens::refine(query, docs, config, gateway)?;
        trace.srt_scores = scores;
        trace.final_context = context;
    }
    let generation = gateway.generate(
        query,
        &trace.final_context.docs,
        trace.final_context.synthetic_summary.as_deref(),
    )?;
    trace.answer = generation.text;
    Ok(())
}

/// Answers one query. Failures are recorded in the trace and the query is
/// scored as incorrect.
pub fn run_query(
    query: &QueryRecord,
    retriever: &Retriever,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> QueryTrace {
    let mut trace = QueryTrace::new(&query.query_id);
    if let Err(message) = config.validate() {
        trace.error = Some(TraceError {
            kind: ErrorKind::Config,
            message,
        });
    } else if let Err(e) = answer_query(&mut trace, query, retriever, config, gateway) {
        log::warn!("query {} failed: {}", query.query_id, e.message);
        trace.error = Some(e);
    }
    let matcher = Matcher::new(config.matcher);
    let score = if trace.error.is_some() {
        0.0
    } else {
        matcher.judge(&trace.answer, query).unwrap_or(0.0)
    };
    trace.score = Some(score);
    trace.correct = Some(eval::is_correct(score));
    trace
}

/// Answers every query with up to `parallelism` workers. Output is sorted by
/// `query_id` and does not depend on scheduling.
///
/// Once a query finds the backend unreachable no new queries are started;
/// the traces completed so far are returned, so the result can be shorter
/// than `queries`.
pub fn run_batch(
    queries: &[QueryRecord],
    retriever: &Retriever,
    config: &PipelineConfig,
    gateway: &Gateway,
    parallelism: usize,
) -> Result<Vec<QueryTrace>, PipelineError> {
    if parallelism == 0 {
        return Err(PipelineError::Parallelism);
    }
    config.validate().map_err(PipelineError::Config)?;
    let next = AtomicUsize::new(0);
    let down = AtomicBool::new(false);
    let results = Mutex::new(Vec::with_capacity(queries.len()));
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(queries.len().max(1)) {
            scope.spawn(|| {
                let mut local = Vec::new();
                while !down.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(query) = queries.get(i) else { break };
                    let trace = run_query(query, retriever, config, gateway);
                    if trace.is_unreachable() {
                        down.store(true, Ordering::Relaxed);
                    }
                    local.push(trace);
                }
                results.lock().expect("results poisoned").extend(local);
            });
        }
    });
    let mut traces = results.into_inner().expect("results poisoned");
    traces.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(traces)
}

pub fn write_traces(path: &Path, traces: &[QueryTrace]) -> Result<(), KbError> {
    kb::write_jsonl(path, traces)
}

pub fn read_traces(path: &Path) -> Result<Vec<QueryTrace>, KbError> {
    kb::read_jsonl(path)
}
