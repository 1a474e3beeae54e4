//! Decision logic for the three reflection tokens.
//!
//! * RET gates retrieval: the `[Ret]`/`[NoRet]` first-token logits become a
//!   two-way softmax score and the query retrieves iff the score exceeds γ.
//! * SRT scores each retrieved document with `[Rel]`/`[NoRel]` and reranks;
//!   `auto` mode keeps documents scoring strictly above 0.5.
//! * MCT asks the model which SRT-selected documents are mutually consistent
//!   and applies one of three strategies to the answer.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, PromptId, TagPair, RET_TAGS, SRT_TAGS};
use crate::kb::{Document, KnowledgeBase, QueryRecord, RetrievalHit};
use crate::pipeline::PipelineConfig;

/// Default RET threshold γ.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Auto-mode SRT keeps documents scoring strictly above this.
pub const AUTO_SRT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("logits must be finite (got {0}, {1})")]
    NonFinite(f64, f64),
    #[error("gamma must lie in (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("consistency refinement needs a non-empty document set")]
    EmptyContext,
    #[error("retrieved doc_id {0} is not in the knowledge base")]
    UnknownDoc(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T> = std::result::Result<T, TokenError>;

/// Softmax probability of the positive tag in a two-tag distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairScore(f64);

impl PairScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `exp(z_pos) / (exp(z_pos) + exp(z_neg))`, evaluated after subtracting the
/// larger logit so neither exponential can overflow.
pub fn softmax_pair(z_pos: f64, z_neg: f64) -> Result<PairScore> {
    if !(z_pos.is_finite() && z_neg.is_finite()) {
        return Err(TokenError::NonFinite(z_pos, z_neg));
    }
    let m = z_pos.max(z_neg);
    let e_pos = (z_pos - m).exp();
    let e_neg = (z_neg - m).exp();
    Ok(PairScore(e_pos / (e_pos + e_neg)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetLabel {
    Ret,
    NoRet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetDecision {
    pub score: PairScore,
    pub label: RetLabel,
    pub gamma: f64,
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(TokenError::GammaOutOfRange(gamma))
    }
}

/// `Ret` iff `score > gamma`; equality resolves to `NoRet`.
pub fn decide_ret(score: PairScore, gamma: f64) -> Result<RetDecision> {
    validate_gamma(gamma)?;
    let label = if score.0 > gamma {
        RetLabel::Ret
    } else {
        RetLabel::NoRet
    };
    Ok(RetDecision {
        score,
        label,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub srt_score: PairScore,
    pub retrieval_rank: usize,
}

/// How many SRT-scored documents survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SrtSelectionMode {
    /// Keep every document scoring above 0.5.
    #[default]
    Auto,
    /// Keep the `n` best documents.
    Fixed(usize),
}

impl fmt::Display for SrtSelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrtSelectionMode::Auto => f.write_str("auto"),
            SrtSelectionMode::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SrtSelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SrtSelectionMode::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(SrtSelectionMode::Fixed(n)),
            _ => Err(format!("expected \"auto\" or a positive integer, got {s:?}")),
        }
    }
}

impl Serialize for SrtSelectionMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SrtSelectionMode::Auto => serializer.serialize_str("auto"),
            SrtSelectionMode::Fixed(n) => serializer.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SrtSelectionMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Count(u64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Count(0) => Err(serde::de::Error::custom("fixed SRT count must be >= 1")),
            Raw::Count(n) => Ok(SrtSelectionMode::Fixed(n as usize)),
        }
    }
}

/// Score descending, then retrieval rank, then doc_id.
fn srt_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.srt_score
        .0
        .total_cmp(&a.srt_score.0)
        .then_with(|| a.retrieval_rank.cmp(&b.retrieval_rank))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub fn select_srt(scored: &[ScoredDoc], mode: SrtSelectionMode) -> Vec<ScoredDoc> {
    let mut out: Vec<ScoredDoc> = match mode {
        SrtSelectionMode::Auto => scored
            .iter()
            .filter(|d| d.srt_score.0 > AUTO_SRT_THRESHOLD)
            .cloned()
            .collect(),
        SrtSelectionMode::Fixed(_) => scored.to_vec(),
    };
    out.sort_by(srt_order);
    if let SrtSelectionMode::Fixed(n) = mode {
        out.truncate(n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MctStrategy {
    /// Answer from the consistent documents only.
    Filter,
    /// Answer from the model's summary only.
    Merge,
    /// Consistent documents first, the rest after.
    Rerank,
}

impl MctStrategy {
    pub const ALL: [MctStrategy; 3] = [MctStrategy::Merge, MctStrategy::Rerank, MctStrategy::Filter];

    pub fn as_str(self) -> &'static str {
        match self {
            MctStrategy::Filter => "filter",
            MctStrategy::Merge => "merge",
            MctStrategy::Rerank => "rerank",
        }
    }
}

impl fmt::Display for MctStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MctStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filter" => Ok(MctStrategy::Filter),
            "merge" => Ok(MctStrategy::Merge),
            "rerank" => Ok(MctStrategy::Rerank),
            _ => Err(format!("unknown MCT strategy {s:?} (filter, merge, rerank)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Provenance {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "srt")]
    Srt,
    #[serde(rename = "mct-filter")]
    MctFilter,
    #[serde(rename = "mct-merge")]
    MctMerge,
    #[serde(rename = "mct-rerank")]
    MctRerank,
}

/// The reference material handed to answer generation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextSet {
    pub docs: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_summary: Option<String>,
    pub strategy_provenance: Provenance,
}

impl ContextSet {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            docs: Vec::new(),
            synthetic_summary: None,
            strategy_provenance: provenance,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty() && self.synthetic_summary.is_none()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.docs.iter().map(|d| d.doc_id.as_str()).collect()
    }
}

/// Applies a consistency verdict to `docs`. `kept` must be ascending and in
/// range (the gateway guarantees both).
pub fn restructure(
    docs: Vec<Document>,
    kept: &[usize],
    summary: &str,
    strategy: MctStrategy,
) -> ContextSet {
    match strategy {
        MctStrategy::Filter => ContextSet {
            docs: kept.iter().map(|&i| docs[i].clone()).collect(),
            synthetic_summary: None,
            strategy_provenance: Provenance::MctFilter,
        },
        MctStrategy::Merge => ContextSet {
            docs: Vec::new(),
            synthetic_summary: Some(summary.to_string()),
            strategy_provenance: Provenance::MctMerge,
        },
        MctStrategy::Rerank => {
            let mut is_kept = vec![false; docs.len()];
            for &i in kept {
                is_kept[i] = true;
            }
            let (mut front, back): (Vec<_>, Vec<_>) = docs
                .into_iter()
                .zip(is_kept)
                .partition(|(_, keep)| *keep);
            front.extend(back);
            ContextSet {
                docs: front.into_iter().map(|(d, _)| d).collect(),
                synthetic_summary: None,
                strategy_provenance: Provenance::MctRerank,
            }
        }
    }
}

/// Consistency refinement over the SRT-selected set. A single document passes
/// through untouched without a backend call.
pub fn apply_mct(
    query: &QueryRecord,
    selected: ContextSet,
    strategy: MctStrategy,
    gateway: &Gateway,
) -> Result<ContextSet> {
    match selected.docs.len() {
        0 => Err(TokenError::EmptyContext),
        1 => Ok(selected),
        _ => {
            let verdict = gateway.refine_consistency(query, &selected.docs)?;
            Ok(restructure(
                selected.docs,
                &verdict.kept_indices,
                &verdict.summary,
                strategy,
            ))
        }
    }
}

fn score_pair(
    gateway: &Gateway,
    query: &QueryRecord,
    document: Option<&Document>,
    prompt: PromptId,
    tags: TagPair,
) -> Result<PairScore> {
    let logits = gateway.score_tags(query, document, prompt, tags)?;
    let z = |tag: &str| {
        logits
            .get(tag)
            .ok_or_else(|| GatewayError::Protocol(format!("missing tag {tag}")))
    };
    softmax_pair(z(tags.positive)?, z(tags.negative)?)
}

/// RET gate; `None` when the stage is disabled.
pub fn gate(query: &QueryRecord, config: &PipelineConfig, gateway: &Gateway) -> Result<Option<RetDecision>> {
    if !config.stage_flags.ret {
        return Ok(None);
    }
    let score = score_pair(gateway, query, None, PromptId::Ret, RET_TAGS)?;
    decide_ret(score, config.gamma).map(Some)
}

/// SRT scores for `docs` (given in retrieval order, rank = position + 1).
pub fn score_documents(
    query: &QueryRecord,
    docs: &[Document],
    gateway: &Gateway,
) -> Result<Vec<ScoredDoc>> {
    docs.iter()
        .enumerate()
        .map(|(i, doc)| {
            Ok(ScoredDoc {
                doc_id: doc.doc_id.clone(),
                srt_score: score_pair(gateway, query, Some(doc), PromptId::Srt, SRT_TAGS)?,
                retrieval_rank: i + 1,
            })
        })
        .collect()
}

/// SRT then MCT over already-retrieved documents. Returns the SRT scores (empty
/// when SRT is disabled) and the final context.
pub fn refine(
    query: &QueryRecord,
    docs: Vec<Document>,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<(Vec<ScoredDoc>, ContextSet)> {
    if !config.stage_flags.srt {
        return Ok((
            Vec::new(),
            ContextSet {
                docs,
                synthetic_summary: None,
                strategy_provenance: Provenance::None,
            },
        ));
    }
    let scored = score_documents(query, &docs, gateway)?;
    let selected = select_srt(&scored, config.srt_mode);
    let picked: Vec<Document> = selected
        .iter()
        .map(|s| {
            docs.iter()
                .find(|d| d.doc_id == s.doc_id)
                .cloned()
                .expect("selected ids come from docs")
        })
        .collect();
    let context = ContextSet {
        docs: picked,
        synthetic_summary: None,
        strategy_provenance: Provenance::Srt,
    };
    if !config.stage_flags.mct || context.docs.is_empty() {
        return Ok((scored, context));
    }
    let strategy = config
        .mct_strategy
        .ok_or_else(|| TokenError::InvalidConfig("MCT enabled without a strategy".into()))?;
    Ok((scored, apply_mct(query, context, strategy, gateway)?))
}

/// Full token stack over a retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct StackOutcome {
    pub ret_decision: Option<RetDecision>,
    pub srt_scores: Vec<ScoredDoc>,
    pub context: ContextSet,
}

/// RET → SRT → MCT with disabled stages acting as identity. A `NoRet` gate
/// yields an empty context (direct answering).
pub fn run_token_stack(
    query: &QueryRecord,
    retrieved: &[RetrievalHit],
    kb: &KnowledgeBase,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<StackOutcome> {
    config.validate().map_err(TokenError::InvalidConfig)?;
    let ret_decision = gate(query, config, gateway)?;
    if matches!(ret_decision, Some(RetDecision { label: RetLabel::NoRet, .. })) {
        return Ok(StackOutcome {
            ret_decision,
            srt_scores: Vec::new(),
            context: ContextSet::empty(Provenance::None),
        });
    }
    let docs = retrieved
        .iter()
        .map(|h| {
            kb.get(&h.doc_id)
                .cloned()
                .ok_or_else(|| TokenError::UnknownDoc(h.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (srt_scores, context) = refine(query, docs, config, gateway)?;
    Ok(StackOutcome {
        ret_decision,
        srt_scores,
        context,
    })
}
