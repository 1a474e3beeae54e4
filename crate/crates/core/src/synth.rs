//! Synthetic desk-scale scenarios for the mock oracle.
//!
//! [`ablation_scenario`] builds a knowledge base, a query set with query
//! vectors, and a truth table in which every query belongs to exactly one
//! behaviour group:
//!
//! | group    | direct | retrieved documents (by retrieval rank)                       |
//! |----------|--------|---------------------------------------------------------------|
//! | `stable` | right  | no effect                                                     |
//! | `ret`    | right  | rank 1 corrupts the answer                                    |
//! | `srt`    | wrong  | rank 1 leaves it wrong, ranks 3 and 4 fix it                  |
//! | `mct`    | wrong  | rank 1 looks relevant but is wrong, rank 2 fixes it           |
//! | `hard`   | wrong  | no effect                                                     |
//!
//! so the RET gate helps `ret`, SRT additionally helps `srt`, and consistency
//! refinement additionally helps `mct`. The truth table is derived from the
//! actual retrieval result, so it stays valid for any seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{ConditionedEntry, ConsistencyEntry, DirectEntry, OracleTruthTable};
use crate::kb::{self, Document, KbError, KnowledgeBase, QueryRecord, QuerySet, QuerySource, Retriever, VectorStore};

pub const GROUPS: [&str; 5] = ["stable", "ret", "srt", "mct", "hard"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub queries: usize,
    pub docs: usize,
    pub dim: usize,
    pub seed: u64,
    /// Relative weights of [`GROUPS`], in order.
    pub weights: [usize; 5],
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            queries: 200,
            docs: 1000,
            dim: 64,
            seed: 0,
            weights: [20, 15, 20, 15, 30],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kb: Arc<KnowledgeBase>,
    pub queries: QuerySet,
    pub table: OracleTruthTable,
    /// Group name for every query id.
    pub groups: BTreeMap<String, String>,
}

impl Scenario {
    pub fn retriever(&self) -> Retriever {
        let vectors = self.queries.vectors().expect("scenario has query vectors").clone();
        Retriever::new(self.kb.clone(), QuerySource::Dense(vectors))
    }

    pub fn queries_in(&self, group: &str) -> Vec<&QueryRecord> {
        self.queries
            .queries()
            .iter()
            .filter(|q| self.groups.get(&q.query_id).map(String::as_str) == Some(group))
            .collect()
    }

    /// Writes `docs.jsonl`, `manifest.json`, `vectors.bin`, `queries.jsonl`,
    /// `query_manifest.json`, `query_vectors.bin` and `truth_table.json`.
    pub fn write(&self, dir: &Path) -> Result<(), KbError> {
        std::fs::create_dir_all(dir).map_err(|e| KbError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        kb::write_jsonl(&dir.join("docs.jsonl"), self.kb.documents())?;
        self.kb
            .vectors()
            .save(&dir.join("manifest.json"), &dir.join("vectors.bin"))?;
        kb::write_jsonl(&dir.join("queries.jsonl"), self.queries.queries())?;
        if let Some(v) = self.queries.vectors() {
            v.save(&dir.join("query_manifest.json"), &dir.join("query_vectors.bin"))?;
        }
        let path = dir.join("truth_table.json");
        std::fs::write(&path, self.table.to_json_pretty()).map_err(|e| KbError::Io { path, source: e })
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Answer strings for query `i`: (gold-matching, wrong).
fn answers(query: &QueryRecord, i: usize) -> (String, String) {
    match query.answer_range {
        Some([lo, hi]) => (
            format!("about {} meters", (lo + hi) / 2.0),
            format!("about {} meters", hi + 50.0),
        ),
        None => (
            query.gold_answers.as_ref().expect("validated")[0].clone(),
            format!("wrong answer {i}"),
        ),
    }
}

pub fn ablation_scenario(spec: &ScenarioSpec) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let doc_rows: Vec<Vec<f32>> = (0..spec.docs).map(|_| random_unit(&mut rng, spec.dim)).collect();
    let docs: Vec<Document> = (0..spec.docs)
        .map(|i| Document {
            doc_id: format!("d{i:05}"),
            page_title: format!("Page {}", i / 3),
            section_id: format!("{}", i % 3),
            text: format!("Section {} of page {} describes entity {i}.", i % 3, i / 3),
            embedding_rows: vec![i],
        })
        .collect();
    let kb = Arc::new(
        KnowledgeBase::new(docs, VectorStore::from_rows(spec.dim, &doc_rows).expect("unit rows"))
            .expect("generated knowledge base is valid"),
    );

    let total_weight: usize = spec.weights.iter().sum();
    let mut group_of = Vec::with_capacity(spec.queries);
    let mut assigned = 0;
    for (g, &w) in spec.weights.iter().enumerate() {
        let n = if g + 1 == GROUPS.len() {
            spec.queries - assigned
        } else {
            spec.queries * w / total_weight
        };
        group_of.extend(std::iter::repeat_n(g, n));
        assigned += n;
    }
    // Interleave groups so splits and ids do not align with behaviour.
    group_of.sort_by_key(|&g| g);
    let mut order: Vec<usize> = (0..spec.queries).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let mut query_rows = Vec::with_capacity(spec.queries);
    let mut queries = Vec::with_capacity(spec.queries);
    for i in 0..spec.queries {
        let anchor = rng.gen_range(0..spec.docs);
        let noise = random_unit(&mut rng, spec.dim);
        query_rows.push(
            doc_rows[anchor]
                .iter()
                .zip(&noise)
                .map(|(a, n)| a + 0.3 * n)
                .collect::<Vec<f32>>(),
        );
        let numeric = i % 4 == 3;
        let value = 10.0 + i as f64;
        queries.push(QueryRecord {
            query_id: format!("q{i:04}"),
            question: format!("What is known about the entity in image {i}?"),
            embedding_row: Some(i),
            gold_answers: (!numeric).then(|| vec![format!("entity {i}"), format!("Entity-{i}")]),
            answer_range: numeric.then_some([value - 1.0, value + 1.0]),
            split_tags: vec![if i % 2 == 0 { "unseen-q" } else { "unseen-e" }.to_string()],
        });
    }
    let query_vectors = VectorStore::from_rows(spec.dim, &query_rows).expect("finite rows");
    let query_set = QuerySet::new(queries, Some(query_vectors.clone())).expect("valid queries");

    let retriever = Retriever::new(kb.clone(), QuerySource::Dense(query_vectors));
    let mut table = OracleTruthTable::default();
    let mut groups = BTreeMap::new();
    for (slot, &qi) in order.iter().enumerate() {
        let query = &query_set.queries()[qi];
        let group = GROUPS[group_of[slot]];
        groups.insert(query.query_id.clone(), group.to_string());
        let (right, wrong) = answers(query, qi);
        let top: Vec<String> = retriever
            .retrieve(query, 5)
            .expect("scenario retrieval")
            .into_iter()
            .map(|h| h.doc_id)
            .collect();
        let qid = query.query_id.clone();
        let cond = |rank: usize, answer: &str, correct: bool| ConditionedEntry {
            query_id: qid.clone(),
            doc_id: top[rank - 1].clone(),
            answer: answer.to_string(),
            correct,
        };
        let direct_right = matches!(group, "stable" | "ret");
        table.direct.insert(
            qid.clone(),
            DirectEntry {
                answer: if direct_right { right.clone() } else { wrong.clone() },
                correct: direct_right,
            },
        );
        match group {
            "ret" => table.conditioned.push(cond(1, &wrong, false)),
            "srt" => {
                table.conditioned.push(cond(1, &wrong, false));
                table.conditioned.push(cond(3, &right, true));
                table.conditioned.push(cond(4, &right, true));
                table.consistency.insert(
                    qid.clone(),
                    ConsistencyEntry {
                        consistent_doc_ids: vec![top[2].clone(), top[3].clone()],
                        summary: format!("Both references agree: {right}."),
                        answer: None,
                    },
                );
            }
            "mct" => {
                // Rank 1 fools the relevance head: its flag says it fixes the
                // answer, but the answer it produces is wrong.
                table.conditioned.push(cond(1, &wrong, true));
                table.conditioned.push(cond(2, &right, true));
                table.consistency.insert(
                    qid.clone(),
                    ConsistencyEntry {
                        consistent_doc_ids: vec![top[1].clone()],
                        summary: format!("The consistent reference states {right}."),
                        answer: None,
                    },
                );
            }
            _ => {}
        }
    }

    Scenario {
        kb,
        queries: query_set,
        table,
        groups,
    }
}

/// Expected full-credit fraction of each ablation row (none, RET, SRT,
/// RET+SRT, SRT+MCT, RET+SRT+MCT) on an [`ablation_scenario`], counted
/// directly from the group sizes.
pub fn expected_ablation_accuracy(scenario: &Scenario) -> [f64; 6] {
    let n = scenario.groups.len() as f64;
    let count = |names: &[&str]| {
        scenario
            .groups
            .values()
            .filter(|g| names.contains(&g.as_str()))
            .count() as f64
            / n
    };
    [
        count(&["stable"]),
        count(&["stable", "ret"]),
        count(&["stable", "ret", "srt"]),
        count(&["stable", "ret", "srt"]),
        count(&["stable", "ret", "srt", "mct"]),
        count(&["stable", "ret", "srt", "mct"]),
    ]
}
