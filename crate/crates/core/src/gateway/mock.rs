//! Deterministic oracle backend driven by a truth table.
//!
//! The table fixes the model's direct answers, its answers conditioned on a
//! single leading document, and its consistency verdicts. Tag logits are
//! derived from the `correct` flags with a fixed margin:
//!
//! * `P_RET`: `[Ret] = +m/2, [NoRet] = -m/2` when the direct answer is wrong,
//!   reversed when it is right.
//! * `P_SRT`: `[Rel] = +m/2, [NoRel] = -m/2` when the document flips a wrong
//!   direct answer to right, reversed when it flips right to wrong, and both
//!   zero when correctness is unchanged (or the pair has no entry).
//!
//! Generation with context uses the first document, in context order, that has
//! a conditioned entry. A merged summary answers with the consistency entry's
//! own answer when present, else with the first consistent document that has a
//! conditioned entry.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Backend, ConsistRequest, ConsistResponse, GatewayError, GenerateRequest, GenerateResponse,
    PromptId, Result, ScoreTagsRequest, ScoreTagsResponse, TAG_NO_REL, TAG_NO_RET, TAG_REL,
    TAG_RET,
};

fn default_margin() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectEntry {
    pub answer: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedEntry {
    pub query_id: String,
    pub doc_id: String,
    pub answer: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub consistent_doc_ids: Vec<String>,
    pub summary: String,
    /// Answer produced when the summary alone is the context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Serialized form of the mock oracle (`truth_table.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruthTable {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub direct: BTreeMap<String, DirectEntry>,
    #[serde(default)]
    pub conditioned: Vec<ConditionedEntry>,
    #[serde(default)]
    pub consistency: BTreeMap<String, ConsistencyEntry>,
}

impl Default for OracleTruthTable {
    fn default() -> Self {
        Self {
            margin: default_margin(),
            direct: BTreeMap::new(),
            conditioned: Vec::new(),
            consistency: BTreeMap::new(),
        }
    }
}

impl OracleTruthTable {
    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: Self =
            serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(format!("margin must be positive, got {}", self.margin));
        }
        let mut seen = HashSet::new();
        for entry in &self.conditioned {
            if !seen.insert((entry.query_id.as_str(), entry.doc_id.as_str())) {
                return Err(format!(
                    "duplicate conditioned entry ({}, {})",
                    entry.query_id, entry.doc_id
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("truth table serializes");
        s.push('\n');
        s
    }
}

/// Pure, reentrant oracle backend.
#[derive(Debug, Clone)]
pub struct MockBackend {
    table: OracleTruthTable,
    conditioned: HashMap<(String, String), usize>,
}

impl MockBackend {
    pub fn new(table: OracleTruthTable) -> Self {
        let conditioned = table
            .conditioned
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.query_id.clone(), e.doc_id.clone()), i))
            .collect();
        Self { table, conditioned }
    }

    pub fn table(&self) -> &OracleTruthTable {
        &self.table
    }

    fn direct(&self, query_id: &str) -> Result<&DirectEntry> {
        self.table
            .direct
            .get(query_id)
            .ok_or_else(|| GatewayError::NoEntry(format!("query {query_id}")))
    }

    fn conditioned(&self, query_id: &str, doc_id: &str) -> Option<&ConditionedEntry> {
        self.conditioned
            .get(&(query_id.to_string(), doc_id.to_string()))
            .map(|&i| &self.table.conditioned[i])
    }

    fn pair(&self, positive_wins: Option<bool>) -> (f64, f64) {
        let half = self.table.margin / 2.0;
        match positive_wins {
            Some(true) => (half, -half),
            Some(false) => (-half, half),
            None => (0.0, 0.0),
        }
    }
}

impl Backend for MockBackend {
    fn score_tags(&self, request: &ScoreTagsRequest) -> Result<ScoreTagsResponse> {
        let query_id = request.query.query_id.as_str();
        let direct = self.direct(query_id)?;
        let (positive, negative, (z_pos, z_neg)) = match (request.prompt_id, &request.document) {
            (PromptId::Ret, None) => (TAG_RET, TAG_NO_RET, self.pair(Some(!direct.correct))),
            (PromptId::Srt, Some(doc)) => {
                let flip = self
                    .conditioned(query_id, &doc.doc_id)
                    .and_then(|c| match (direct.correct, c.correct) {
                        (false, true) => Some(true),
                        (true, false) => Some(false),
                        _ => None,
                    });
                (TAG_REL, TAG_NO_REL, self.pair(flip))
            }
            (id, _) => {
                return Err(GatewayError::InvalidRequest(format!(
                    "unsupported scoring request for {}",
                    id.as_str()
                )))
            }
        };
        let mut logits = BTreeMap::new();
        for tag in &request.tags {
            let z = if tag == positive {
                z_pos
            } else if tag == negative {
                z_neg
            } else {
                return Err(GatewayError::InvalidRequest(format!(
                    "tag {tag} is not defined for {}",
                    request.prompt_id.as_str()
                )));
            };
            logits.insert(tag.clone(), z);
        }
        Ok(ScoreTagsResponse { logits })
    }

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse> {
        let query_id = request.query.query_id.as_str();
        let direct = self.direct(query_id)?;
        if let Some(_summary) = &request.summary {
            if let Some(entry) = self.table.consistency.get(query_id) {
                if let Some(answer) = &entry.answer {
                    return Ok(GenerateResponse {
                        text: answer.clone(),
                    });
                }
                if let Some(c) = entry
                    .consistent_doc_ids
                    .iter()
                    .find_map(|d| self.conditioned(query_id, d))
                {
                    return Ok(GenerateResponse {
                        text: c.answer.clone(),
                    });
                }
            }
        }
        let text = request
            .context
            .iter()
            .find_map(|d| self.conditioned(query_id, &d.doc_id))
            .map_or_else(|| direct.answer.clone(), |c| c.answer.clone());
        Ok(GenerateResponse { text })
    }

    fn consist(&self, request: &ConsistRequest) -> Result<ConsistResponse> {
        let query_id = request.query.query_id.as_str();
        let Some(entry) = self.table.consistency.get(query_id) else {
            // No entry: every document is consistent and the summary is
            // their concatenated text.
            let summary = request
                .documents
                .iter()
                .map(|d| d.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            return Ok(ConsistResponse {
                kept_indices: (0..request.documents.len()).collect(),
                summary,
            });
        };
        let consistent: HashSet<&str> =
            entry.consistent_doc_ids.iter().map(String::as_str).collect();
        let kept_indices = request
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| consistent.contains(d.doc_id.as_str()))
            .map(|(i, _)| i)
            .collect();
        Ok(ConsistResponse {
            kept_indices,
            summary: entry.summary.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, PromptId, RET_TAGS, SRT_TAGS};
    use crate::kb::{Document, QueryRecord};

    fn query(id: &str) -> QueryRecord {
        QueryRecord {
            query_id: id.into(),
            question: "?".into(),
            embedding_row: None,
            gold_answers: Some(vec!["right".into()]),
            answer_range: None,
            split_tags: vec![],
        }
    }

    fn doc(id: &str) -> Document {
        Document {
            doc_id: id.into(),
            page_title: id.into(),
            section_id: "0".into(),
            text: "t".into(),
            embedding_rows: vec![0],
        }
    }

    fn table() -> OracleTruthTable {
        let mut t = OracleTruthTable::default();
        t.direct.insert("easy".into(), DirectEntry { answer: "right".into(), correct: true });
        t.direct.insert("hard".into(), DirectEntry { answer: "wrong".into(), correct: false });
        let cond = |q: &str, d: &str, a: &str, c: bool| ConditionedEntry {
            query_id: q.into(),
            doc_id: d.into(),
            answer: a.into(),
            correct: c,
        };
        t.conditioned.push(cond("hard", "fix", "right", true));
        t.conditioned.push(cond("easy", "break", "wrong", false));
        t.conditioned.push(cond("easy", "keep", "right", true));
        t.consistency.insert(
            "hard".into(),
            ConsistencyEntry {
                consistent_doc_ids: vec!["fix".into()],
                summary: "merged".into(),
                answer: None,
            },
        );
        t
    }

    #[test]
    fn ret_logits_follow_direct_correctness() {
        let gw = Gateway::mock(table());
        let easy = gw.score_tags(&query("easy"), None, PromptId::Ret, RET_TAGS).unwrap();
        assert_eq!(easy.get("[NoRet]").unwrap() - easy.get("[Ret]").unwrap(), 2.0);
        let hard = gw.score_tags(&query("hard"), None, PromptId::Ret, RET_TAGS).unwrap();
        assert_eq!(hard.get("[Ret]").unwrap() - hard.get("[NoRet]").unwrap(), 2.0);
    }

    #[test]
    fn srt_logits_follow_flips() {
        let gw = Gateway::mock(table());
        let score = |q: &str, d: &str| {
            let l = gw
                .score_tags(&query(q), Some(&doc(d)), PromptId::Srt, SRT_TAGS)
                .unwrap();
            (l.get("[Rel]").unwrap(), l.get("[NoRel]").unwrap())
        };
        assert_eq!(score("hard", "fix"), (1.0, -1.0));
        assert_eq!(score("easy", "break"), (-1.0, 1.0));
        assert_eq!(score("easy", "keep"), (0.0, 0.0));
        assert_eq!(score("easy", "unknown"), (0.0, 0.0));
    }

    #[test]
    fn generation_precedence() {
        let gw = Gateway::mock(table());
        assert_eq!(gw.generate(&query("hard"), &[], None).unwrap().text, "wrong");
        let ctx = [doc("other"), doc("fix")];
        assert_eq!(gw.generate(&query("hard"), &ctx, None).unwrap().text, "right");
        let ctx = [doc("keep"), doc("break")];
        assert_eq!(gw.generate(&query("easy"), &ctx, None).unwrap().text, "right");
        assert_eq!(
            gw.generate(&query("hard"), &[], Some("merged")).unwrap().text,
            "right"
        );
        let err = gw.generate(&query("nobody"), &[], None).unwrap_err();
        assert!(err.to_string().contains("no truth-table entry"), "{err}");
    }

    #[test]
    fn consistency_lookup() {
        let gw = Gateway::mock(table());
        let r = gw
            .refine_consistency(&query("hard"), &[doc("fix"), doc("noise")])
            .unwrap();
        assert_eq!(r.kept_indices, [0]);
        assert_eq!(r.summary, "merged");
        let r = gw.refine_consistency(&query("easy"), &[doc("a"), doc("b")]).unwrap();
        assert_eq!(r.kept_indices, [0, 1]);
        assert!(!r.summary.is_empty());
    }

    #[test]
    fn custom_margin_scales_logits() {
        let mut t = table();
        t.margin = 5.0;
        let gw = Gateway::mock(t);
        let l = gw.score_tags(&query("hard"), None, PromptId::Ret, RET_TAGS).unwrap();
        assert_eq!(l.get("[Ret]"), Some(2.5));
    }

    #[test]
    fn table_validation() {
        let mut t = table();
        t.margin = 0.0;
        assert!(t.validate().is_err());
        let mut t = table();
        t.conditioned.push(t.conditioned[0].clone());
        assert!(t.validate().is_err());
        let parsed: OracleTruthTable = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed.margin, 2.0);
    }
}
