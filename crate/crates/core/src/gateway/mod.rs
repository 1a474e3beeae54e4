//! Model-backend contract.
//!
//! Every model call goes through a [`Backend`]: tag scoring at the first
//! generated position, answer generation, and multi-document consistency
//! refinement. Backends are either in-process (the [`MockBackend`] oracle) or
//! remote over the JSON/HTTP protocol ([`HttpBackend`], [`server`]).
//! [`Gateway`] renders prompts, builds requests and validates responses so
//! that callers only ever see well-formed results.

mod http;
mod mock;
pub mod server;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Document, QueryRecord};
use crate::prompts::PromptPack;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{ConditionedEntry, ConsistencyEntry, DirectEntry, MockBackend, OracleTruthTable};

pub const TAG_RET: &str = "[Ret]";
pub const TAG_NO_RET: &str = "[NoRet]";
pub const TAG_REL: &str = "[Rel]";
pub const TAG_NO_REL: &str = "[NoRel]";

pub type Result<T> = std::result::Result<T, GatewayError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    /// Error reported by a backend; the message is passed through verbatim.
    #[error("{message}")]
    Rejected { status: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no truth-table entry for {0}")]
    NoEntry(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// HTTP status a server should use when relaying this error.
    pub fn status(&self) -> u16 {
        match self {
            GatewayError::InvalidRequest(_) => 422,
            GatewayError::NoEntry(_) => 404,
            GatewayError::Rejected { status, .. } => *status,
            GatewayError::Unreachable(_) => 503,
            GatewayError::Protocol(_) => 502,
        }
    }
}

/// Prompt template identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptId {
    #[serde(rename = "P_RET")]
    Ret,
    #[serde(rename = "P_SRT")]
    Srt,
    #[serde(rename = "P_CST")]
    Cst,
    #[serde(rename = "P_VQA")]
    Vqa,
}

impl PromptId {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Ret => "P_RET",
            PromptId::Srt => "P_SRT",
            PromptId::Cst => "P_CST",
            PromptId::Vqa => "P_VQA",
        }
    }
}

/// A (positive, negative) tag pair scored from one first-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagPair {
    pub positive: &'static str,
    pub negative: &'static str,
}

pub const RET_TAGS: TagPair = TagPair {
    positive: TAG_RET,
    negative: TAG_NO_RET,
};

pub const SRT_TAGS: TagPair = TagPair {
    positive: TAG_REL,
    negative: TAG_NO_REL,
};

/// The query as sent to a backend. Gold labels never leave the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireQuery {
    pub query_id: String,
    pub question: String,
}

impl From<&QueryRecord> for WireQuery {
    fn from(q: &QueryRecord) -> Self {
        WireQuery {
            query_id: q.query_id.clone(),
            question: q.question.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTagsRequest {
    pub prompt_id: PromptId,
    pub prompt: String,
    pub query: WireQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<Document>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTagsResponse {
    pub logits: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt_id: PromptId,
    pub prompt: String,
    pub query: WireQuery,
    pub context: Vec<Document>,
    /// Merged reference text standing in for documents (merge strategy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistRequest {
    pub prompt_id: PromptId,
    pub prompt: String,
    pub query: WireQuery,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistResponse {
    pub kept_indices: Vec<usize>,
    pub summary: String,
}

/// Body of every non-2xx protocol response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Raw first-token logits for the requested tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagLogits {
    pub tag_to_logit: BTreeMap<String, f64>,
}

impl TagLogits {
    pub fn get(&self, tag: &str) -> Option<f64> {
        self.tag_to_logit.get(tag).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub kept_indices: Vec<usize>,
    pub summary: String,
}

pub trait Backend: Send + Sync {
    fn score_tags(&self, request: &ScoreTagsRequest) -> Result<ScoreTagsResponse>;
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse>;
    fn consist(&self, request: &ConsistRequest) -> Result<ConsistResponse>;
}

/// Typed, validating front end over a [`Backend`].
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    prompts: Arc<PromptPack>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, prompts: PromptPack) -> Self {
        Self {
            backend,
            prompts: Arc::new(prompts),
        }
    }

    pub fn mock(table: OracleTruthTable) -> Self {
        Self::new(Arc::new(MockBackend::new(table)), PromptPack::default())
    }

    pub fn prompts(&self) -> &PromptPack {
        &self.prompts
    }

    pub fn score_tags(
        &self,
        query: &QueryRecord,
        document: Option<&Document>,
        prompt_id: PromptId,
        tags: TagPair,
    ) -> Result<TagLogits> {
        let prompt = match (prompt_id, document) {
            (PromptId::Ret, None) => self.prompts.render_ret(query),
            (PromptId::Srt, Some(doc)) => self.prompts.render_srt(query, doc),
            (PromptId::Ret, Some(_)) => {
                return Err(GatewayError::InvalidRequest(
                    "P_RET scoring takes no document".into(),
                ))
            }
            (PromptId::Srt, None) => {
                return Err(GatewayError::InvalidRequest(
                    "P_SRT scoring requires a document".into(),
                ))
            }
            (other, _) => {
                return Err(GatewayError::InvalidRequest(format!(
                    "{} is not a tag-scoring prompt",
                    other.as_str()
                )))
            }
        };
        let request = ScoreTagsRequest {
            prompt_id,
            prompt,
            query: query.into(),
            document: document.cloned(),
            tags: vec![tags.positive.to_string(), tags.negative.to_string()],
        };
        let response = self.backend.score_tags(&request)?;
        validate_logits(&request.tags, response.logits).map(|tag_to_logit| TagLogits { tag_to_logit })
    }

    pub fn generate(
        &self,
        query: &QueryRecord,
        context: &[Document],
        summary: Option<&str>,
    ) -> Result<GenerationResult> {
        let request = GenerateRequest {
            prompt_id: PromptId::Vqa,
            prompt: self.prompts.render_vqa(query, context, summary),
            query: query.into(),
            context: context.to_vec(),
            summary: summary.map(str::to_string),
        };
        let response = self.backend.generate(&request)?;
        if response.text.trim().is_empty() {
            return Err(GatewayError::Protocol("empty generation".into()));
        }
        Ok(GenerationResult {
            text: response.text,
        })
    }

    pub fn refine_consistency(
        &self,
        query: &QueryRecord,
        docs: &[Document],
    ) -> Result<ConsistencyResult> {
        if docs.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "consistency refinement needs at least one document".into(),
            ));
        }
        let request = ConsistRequest {
            prompt_id: PromptId::Cst,
            prompt: self.prompts.render_cst(query, docs),
            query: query.into(),
            documents: docs.to_vec(),
        };
        let response = self.backend.consist(&request)?;
        validate_consistency(response, docs.len())
    }
}

fn validate_logits(
    requested: &[String],
    logits: BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    for tag in requested {
        match logits.get(tag) {
            None => {
                return Err(GatewayError::Protocol(format!(
                    "backend response missing tag {tag}"
                )))
            }
            Some(z) if !z.is_finite() => {
                return Err(GatewayError::Protocol(format!(
                    "backend returned non-finite logit for {tag}"
                )))
            }
            Some(_) => {}
        }
    }
    if logits.len() != requested.len() {
        return Err(GatewayError::Protocol(format!(
            "backend returned {} logits for {} requested tags",
            logits.len(),
            requested.len()
        )));
    }
    Ok(logits)
}

fn validate_consistency(response: ConsistResponse, len: usize) -> Result<ConsistencyResult> {
    if let Some(&bad) = response.kept_indices.iter().find(|&&i| i >= len) {
        return Err(GatewayError::Protocol(format!(
            "kept index {bad} out of range for {len} documents"
        )));
    }
    if response.kept_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GatewayError::Protocol(
            "kept indices must be unique and ascending".into(),
        ));
    }
    if !response.kept_indices.is_empty() && response.summary.trim().is_empty() {
        return Err(GatewayError::Protocol(
            "summary must be non-empty when documents are kept".into(),
        ));
    }
    Ok(ConsistencyResult {
        kept_indices: response.kept_indices,
        summary: response.summary,
    })
}

/// Fixed textual encoding of a consistency target: `IDX: i1,i2 | SUMMARY: text`.
pub fn encode_consistency_target(indices: &[usize], summary: &str) -> String {
    let idx: Vec<String> = indices.iter().map(usize::to_string).collect();
    format!("IDX: {} | SUMMARY: {}", idx.join(","), summary)
}

/// Inverse of [`encode_consistency_target`]; strict.
pub fn parse_consistency_target(text: &str) -> Option<(Vec<usize>, String)> {
    let rest = text.trim().strip_prefix("IDX:")?;
    let (idx, summary) = rest.split_once("| SUMMARY:")?;
    let idx = idx.trim();
    let indices = if idx.is_empty() {
        Vec::new()
    } else {
        idx.split(',')
            .map(|s| s.trim().parse().ok())
            .collect::<Option<Vec<usize>>>()?
    };
    Some((indices, summary.strip_prefix(' ').unwrap_or(summary).to_string()))
}
