//! Training-data construction from the target model's own behaviour.
//!
//! * RET: answer every query without context; correct answers mean the model
//!   needs no retrieval (`NoRet`), wrong answers mean it does (`Ret`).
//! * SRT: answer once directly and once per retrieved document. A document
//!   that turns a wrong answer right is `Rel`; one that turns a right answer
//!   wrong is `NoRel`. Unchanged correctness yields no record.
//! * MCT: for queries with more than one `Rel` document, summarize the
//!   relevant set, contaminate it with sampled `NoRel` documents and record
//!   where the relevant ones ended up.
//!
//! Sampling uses one ChaCha generator per query, seeded from the global seed
//! and the query id, so a query's output does not change when others are
//! added or removed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{is_correct, Matcher};
use crate::gateway::{encode_consistency_target, Gateway, TAG_NO_REL, TAG_NO_RET, TAG_REL, TAG_RET};
use crate::kb::{self, Document, KbError, KnowledgeBase, QueryRecord, Retriever};
use crate::prompts::PromptPack;
use crate::tokens::RetLabel;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("tau_percent must be a finite value >= 0, got {0}")]
    InvalidTau(f64),
    #[error("subsample fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record references unknown {0}")]
    Unresolved(String),
    #[error(transparent)]
    Io(#[from] KbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelLabel {
    Rel,
    NoRel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetExample {
    pub query_id: String,
    pub label: RetLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrtExample {
    pub query_id: String,
    pub doc_id: String,
    pub label: RelLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MctExample {
    pub query_id: String,
    pub summary: String,
    pub mixed_doc_ids: Vec<String>,
    /// Ascending positions of the relevant documents in `mixed_doc_ids`.
    pub idx: Vec<usize>,
}

/// A unit of work that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub reason: String,
}

/// Builder output: the records plus everything that was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Built<T> {
    pub records: Vec<T>,
    pub skipped: Vec<Skipped>,
}

impl<T> Built<T> {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            skipped: Vec::new(),
        }
    }

    fn skip(&mut self, query_id: &str, doc_id: Option<&str>, reason: impl ToString) {
        let reason = reason.to_string();
        match doc_id {
            Some(d) => log::warn!("skipping ({query_id}, {d}): {reason}"),
            None => log::warn!("skipping {query_id}: {reason}"),
        }
        self.skipped.push(Skipped {
            query_id: query_id.to_string(),
            doc_id: doc_id.map(str::to_string),
            reason,
        });
    }
}

fn answer_correct(
    gateway: &Gateway,
    matcher: &Matcher,
    query: &QueryRecord,
    context: &[Document],
) -> Result<bool, String> {
    let text = gateway
        .generate(query, context, None)
        .map_err(|e| e.to_string())?
        .text;
    let score = matcher.judge(&text, query).map_err(|e| e.to_string())?;
    Ok(is_correct(score))
}

pub fn build_ret_dataset(
    queries: &[QueryRecord],
    gateway: &Gateway,
    matcher: &Matcher,
) -> Built<RetExample> {
    let mut out = Built::new();
    for query in queries {
        match answer_correct(gateway, matcher, query, &[]) {
            Ok(correct) => out.records.push(RetExample {
                query_id: query.query_id.clone(),
                label: if correct { RetLabel::NoRet } else { RetLabel::Ret },
            }),
            Err(e) => out.skip(&query.query_id, None, e),
        }
    }
    out.records.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    out
}

pub fn build_srt_dataset(
    queries: &[QueryRecord],
    retriever: &Retriever,
    k: usize,
    gateway: &Gateway,
    matcher: &Matcher,
) -> Result<Built<SrtExample>, ForgeError> {
    if k == 0 {
        return Err(ForgeError::InvalidK);
    }
    let mut out = Built::new();
    for query in queries {
        let direct = match answer_correct(gateway, matcher, query, &[]) {
            Ok(c) => c,
            Err(e) => {
                out.skip(&query.query_id, None, e);
                continue;
            }
        };
        let hits = match retriever.retrieve(query, k) {
            Ok(h) => h,
            Err(e) => {
                out.skip(&query.query_id, None, e);
                continue;
            }
        };
        for doc in retriever.documents(&hits) {
            let with_doc = match answer_correct(gateway, matcher, query, std::slice::from_ref(&doc)) {
                Ok(c) => c,
                Err(e) => {
                    out.skip(&query.query_id, Some(&doc.doc_id), e);
                    continue;
                }
            };
            let label = match (direct, with_doc) {
                (false, true) => RelLabel::Rel,
                (true, false) => RelLabel::NoRel,
                _ => continue,
            };
            out.records.push(SrtExample {
                query_id: query.query_id.clone(),
                doc_id: doc.doc_id,
                label,
            });
        }
    }
    out.records
        .sort_by(|a, b| (&a.query_id, &a.doc_id).cmp(&(&b.query_id, &b.doc_id)));
    Ok(out)
}

/// Per-query generator derived from the global seed and the query id.
pub fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(query_id.as_bytes())
        .finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Number of injected negatives: `ceil(tau% of |relevant|)`, capped by the
/// available irrelevant documents.
pub fn negative_count(tau_percent: f64, relevant: usize, irrelevant: usize) -> usize {
    let wanted = (tau_percent * relevant as f64 / 100.0).ceil();
    (wanted as usize).min(irrelevant)
}

pub fn build_mct_dataset(
    srt_dataset: &[SrtExample],
    queries: &[QueryRecord],
    kb: &KnowledgeBase,
    tau_percent: f64,
    gateway: &Gateway,
    seed: u64,
) -> Result<Built<MctExample>, ForgeError> {
    if !(tau_percent.is_finite() && tau_percent >= 0.0) {
        return Err(ForgeError::InvalidTau(tau_percent));
    }
    let mut groups: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for ex in srt_dataset {
        let (rel, irr) = groups.entry(ex.query_id.as_str()).or_default();
        match ex.label {
            RelLabel::Rel => rel.push(&ex.doc_id),
            RelLabel::NoRel => irr.push(&ex.doc_id),
        }
    }
    let by_id: BTreeMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();

    let mut out = Built::new();
    for (query_id, (mut relevant, mut irrelevant)) in groups {
        if relevant.len() <= 1 {
            continue;
        }
        relevant.sort_unstable();
        relevant.dedup();
        irrelevant.sort_unstable();
        irrelevant.dedup();
        let Some(query) = by_id.get(query_id) else {
            out.skip(query_id, None, "query not in query set");
            continue;
        };
        let docs: Option<Vec<Document>> = relevant.iter().map(|d| kb.get(d).cloned()).collect();
        let Some(docs) = docs else {
            out.skip(query_id, None, "relevant document not in knowledge base");
            continue;
        };
        let summary = match gateway.refine_consistency(query, &docs) {
            Ok(r) if !r.summary.trim().is_empty() => r.summary,
            Ok(_) => {
                out.skip(query_id, None, "empty summary");
                continue;
            }
            Err(e) => {
                out.skip(query_id, None, e);
                continue;
            }
        };
        let mut rng = query_rng(seed, query_id);
        let n_neg = negative_count(tau_percent, relevant.len(), irrelevant.len());
        let mut mixed: Vec<(&str, bool)> = relevant.iter().map(|&d| (d, true)).collect();
        mixed.extend(
            irrelevant
                .choose_multiple(&mut rng, n_neg)
                .map(|&d| (d, false)),
        );
        mixed.shuffle(&mut rng);
        out.records.push(MctExample {
            query_id: query_id.to_string(),
            summary,
            idx: mixed
                .iter()
                .enumerate()
                .filter(|(_, (_, rel))| *rel)
                .map(|(i, _)| i)
                .collect(),
            mixed_doc_ids: mixed.into_iter().map(|(d, _)| d.to_string()).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ret,
    Srt,
    Mct,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ret" => Ok(DatasetKind::Ret),
            "srt" => Ok(DatasetKind::Srt),
            "mct" => Ok(DatasetKind::Mct),
            _ => Err(format!("unknown dataset kind {s:?} (ret, srt, mct)")),
        }
    }
}

/// Any of the three typed datasets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Ret(Vec<RetExample>),
    Srt(Vec<SrtExample>),
    Mct(Vec<MctExample>),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Ret(_) => DatasetKind::Ret,
            Dataset::Srt(_) => DatasetKind::Srt,
            Dataset::Mct(_) => DatasetKind::Mct,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Ret(v) => v.len(),
            Dataset::Srt(v) => v.len(),
            Dataset::Mct(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write(&self, path: &Path) -> Result<(), KbError> {
        match self {
            Dataset::Ret(v) => kb::write_jsonl(path, v),
            Dataset::Srt(v) => kb::write_jsonl(path, v),
            Dataset::Mct(v) => kb::write_jsonl(path, v),
        }
    }

    pub fn read(kind: DatasetKind, path: &Path) -> Result<Self, KbError> {
        Ok(match kind {
            DatasetKind::Ret => Dataset::Ret(kb::read_jsonl(path)?),
            DatasetKind::Srt => Dataset::Srt(kb::read_jsonl(path)?),
            DatasetKind::Mct => Dataset::Mct(kb::read_jsonl(path)?),
        })
    }

    /// Keeps `round(fraction * len)` records (at least one), chosen with a
    /// seeded generator; record order is preserved.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self, ForgeError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(ForgeError::InvalidFraction(fraction));
        }
        fn pick<T: Clone>(v: &[T], fraction: f64, seed: u64) -> Vec<T> {
            if v.is_empty() {
                return Vec::new();
            }
            let n = ((v.len() as f64 * fraction).round() as usize).clamp(1, v.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, v.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| v[i].clone()).collect()
        }
        Ok(match self {
            Dataset::Ret(v) => Dataset::Ret(pick(v, fraction, seed)),
            Dataset::Srt(v) => Dataset::Srt(pick(v, fraction, seed)),
            Dataset::Mct(v) => Dataset::Mct(pick(v, fraction, seed)),
        })
    }
}

/// One supervised fine-tuning pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub kind: DatasetKind,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub input: String,
    pub target: String,
}

/// Renders each record through its prompt template.
pub fn sft_records(
    dataset: &Dataset,
    prompts: &PromptPack,
    queries: &[QueryRecord],
    kb: &KnowledgeBase,
) -> Result<Vec<SftRecord>, ForgeError> {
    let by_id: BTreeMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let query = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| ForgeError::Unresolved(format!("query {id}")))
    };
    let doc = |id: &str| {
        kb.get(id)
            .ok_or_else(|| ForgeError::Unresolved(format!("document {id}")))
    };
    match dataset {
        Dataset::Ret(v) => v
            .iter()
            .map(|ex| {
                Ok(SftRecord {
                    kind: DatasetKind::Ret,
                    query_id: ex.query_id.clone(),
                    doc_id: None,
                    input: prompts.render_ret(query(&ex.query_id)?),
                    target: match ex.label {
                        RetLabel::Ret => TAG_RET,
                        RetLabel::NoRet => TAG_NO_RET,
                    }
                    .to_string(),
                })
            })
            .collect(),
        Dataset::Srt(v) => v
            .iter()
            .map(|ex| {
                Ok(SftRecord {
                    kind: DatasetKind::Srt,
                    query_id: ex.query_id.clone(),
                    doc_id: Some(ex.doc_id.clone()),
                    input: prompts.render_srt(query(&ex.query_id)?, doc(&ex.doc_id)?),
                    target: match ex.label {
                        RelLabel::Rel => TAG_REL,
                        RelLabel::NoRel => TAG_NO_REL,
                    }
                    .to_string(),
                })
            })
            .collect(),
        Dataset::Mct(v) => v
            .iter()
            .map(|ex| {
                let docs = ex
                    .mixed_doc_ids
                    .iter()
                    .map(|d| doc(d).cloned())
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SftRecord {
                    kind: DatasetKind::Mct,
                    query_id: ex.query_id.clone(),
                    doc_id: None,
                    input: prompts.render_cst(query(&ex.query_id)?, &docs),
                    target: encode_consistency_target(&ex.idx, &ex.summary),
                })
            })
            .collect(),
    }
}

/// Writes the SFT export; returns the number of lines written.
pub fn export_sft(
    dataset: &Dataset,
    prompts: &PromptPack,
    queries: &[QueryRecord],
    kb: &KnowledgeBase,
    out_path: &Path,
) -> Result<usize, ForgeError> {
    if dataset.is_empty() {
        return Err(ForgeError::EmptyDataset);
    }
    let records = sft_records(dataset, prompts, queries, kb)?;
    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    let io = |e| KbError::Io {
        path: out_path.to_path_buf(),
        source: e,
    };
    std::fs::File::create(out_path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io)?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_count_rule() {
        assert_eq!(negative_count(50.0, 4, 10), 2);
        assert_eq!(negative_count(50.0, 4, 1), 1);
        assert_eq!(negative_count(0.0, 4, 10), 0);
        assert_eq!(negative_count(25.0, 3, 10), 1);
        assert_eq!(negative_count(100.0, 3, 10), 3);
        assert_eq!(negative_count(10.0, 10, 10), 1);
    }

    #[test]
    fn query_rng_is_stable_and_query_specific() {
        use rand::RngCore;
        assert_eq!(query_rng(7, "q1").next_u64(), query_rng(7, "q1").next_u64());
        assert_ne!(query_rng(7, "q1").next_u64(), query_rng(7, "q2").next_u64());
        assert_ne!(query_rng(0, "q1").next_u64(), query_rng(7, "q1").next_u64());
    }

    #[test]
    fn subsample_keeps_order_and_size() {
        let v: Vec<RetExample> = (0..100)
            .map(|i| RetExample {
                query_id: format!("q{i:03}"),
                label: RetLabel::Ret,
            })
            .collect();
        let d = Dataset::Ret(v);
        let Dataset::Ret(s) = d.subsample(0.1, 3).unwrap() else { unreachable!() };
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0].query_id < w[1].query_id));
        assert_eq!(d.subsample(0.1, 3).unwrap(), d.subsample(0.1, 3).unwrap());
        assert!(d.subsample(0.0, 3).is_err());
        assert!(d.subsample(1.5, 3).is_err());
    }
}
