//! Knowledge-base storage and dense retrieval.
//!
//! A knowledge base is a set of passage-level [`Document`]s plus a row-major
//! `f32` vector file holding one embedding per associated image. Retrieval is
//! an exhaustive cosine scan; a document with several images scores by its
//! best-matching image. Results are ordered by similarity descending with ties
//! broken by ascending `doc_id`, so the output never depends on ingest order
//! or thread scheduling.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default retrieval depth.
pub const DEFAULT_TOP_K: usize = 5;

const NORM_TOLERANCE: f64 = 1e-4;

pub type Result<T> = std::result::Result<T, KbError>;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: line {line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("vector file size mismatch: expected {expected} bytes ({count}x{dim}x4), found {actual}")]
    SizeMismatch {
        expected: u64,
        actual: u64,
        count: usize,
        dim: usize,
    },
    #[error("vector row {row}: {message}")]
    BadVector { row: usize, message: String },
    #[error("document {doc_id}: embedding row out of range ({row} >= {count})")]
    RowOutOfRange {
        doc_id: String,
        row: usize,
        count: usize,
    },
    #[error("query {query_id}: embedding row out of range ({row} >= {count})")]
    QueryRowOutOfRange {
        query_id: String,
        row: usize,
        count: usize,
    },
    #[error("duplicate doc_id {0}")]
    DuplicateDoc(String),
    #[error("duplicate query_id {0}")]
    DuplicateQuery(String),
    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("unknown doc_id {doc_id} in ranked run for query {query_id}")]
    UnknownDoc { query_id: String, doc_id: String },
    #[error("dimension mismatch: store has dim {expected}, query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("query vector is not finite")]
    NonFiniteQuery,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("query {0} has no embedding row")]
    MissingQueryVector(String),
    #[error("query {0} has no ranking in the ranked run")]
    MissingRanking(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KbError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        KbError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One knowledge-base passage (a page section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub page_title: String,
    pub section_id: String,
    pub text: String,
    pub embedding_rows: Vec<usize>,
}

/// An image-question pair with its gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
    /// Closed interval `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_range: Option<[f64; 2]>,
    #[serde(default)]
    pub split_tags: Vec<String>,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| KbError::InvalidRecord {
            id: self.query_id.clone(),
            message: message.to_string(),
        };
        if self.query_id.is_empty() {
            return Err(invalid("empty query_id"));
        }
        match (&self.gold_answers, &self.answer_range) {
            (Some(_), Some(_)) => Err(invalid("both gold_answers and answer_range present")),
            (None, None) => Err(invalid("neither gold_answers nor answer_range present")),
            (Some(gold), None) if gold.is_empty() => Err(invalid("gold_answers is empty")),
            (None, Some([lo, hi])) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                Err(invalid("answer_range must satisfy lo <= hi"))
            }
            _ => Ok(()),
        }
    }
}

impl Document {
    fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(KbError::InvalidRecord {
                id: self.doc_id.clone(),
                message: "empty doc_id".into(),
            });
        }
        if self.text.is_empty() {
            return Err(KbError::InvalidRecord {
                id: self.doc_id.clone(),
                message: "empty text".into(),
            });
        }
        Ok(())
    }
}

/// One retrieval result. `similarity` is absent for externally ranked runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub rank: usize,
}

/// Manifest accompanying a `vectors.bin` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorManifest {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub normalized: bool,
}

impl VectorManifest {
    pub const DTYPE: &'static str = "f32le";
}

/// Row-major `count x dim` matrix of unit-norm `f32` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl VectorStore {
    /// Builds a store from raw rows, normalizing each one. Zero and
    /// non-finite rows are rejected.
    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for (row, v) in rows.iter().enumerate() {
            if v.len() != dim {
                return Err(KbError::BadVector {
                    row,
                    message: format!("length {} != dim {dim}", v.len()),
                });
            }
            data.extend_from_slice(v);
        }
        Self::from_flat(dim, rows.len(), data, false)
    }

    fn from_flat(dim: usize, count: usize, mut data: Vec<f32>, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(KbError::BadVector {
                row: 0,
                message: "dim must be positive".into(),
            });
        }
        for (row, chunk) in data.chunks_exact_mut(dim).enumerate() {
            if chunk.iter().any(|x| !x.is_finite()) {
                return Err(KbError::BadVector {
                    row,
                    message: "non-finite component".into(),
                });
            }
            let norm = chunk.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if normalized {
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(KbError::BadVector {
                        row,
                        message: format!("store flagged normalized but row norm is {norm}"),
                    });
                }
            } else {
                if norm == 0.0 {
                    return Err(KbError::BadVector {
                        row,
                        message: "zero vector".into(),
                    });
                }
                for x in chunk.iter_mut() {
                    *x = (f64::from(*x) / norm) as f32;
                }
            }
        }
        Ok(Self { dim, count, data })
    }

    pub fn load(manifest_path: &Path, vectors_path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(manifest_path).map_err(|e| KbError::io(manifest_path, e))?;
        let manifest: VectorManifest =
            serde_json::from_str(&raw).map_err(|e| KbError::Manifest {
                path: manifest_path.to_path_buf(),
                message: e.to_string(),
            })?;
        if manifest.dtype != VectorManifest::DTYPE {
            return Err(KbError::Manifest {
                path: manifest_path.to_path_buf(),
                message: format!("unsupported dtype {:?}", manifest.dtype),
            });
        }
        if manifest.dim == 0 {
            return Err(KbError::Manifest {
                path: manifest_path.to_path_buf(),
                message: "dim must be positive".into(),
            });
        }
        let bytes = fs::read(vectors_path).map_err(|e| KbError::io(vectors_path, e))?;
        let expected = (manifest.count as u64) * (manifest.dim as u64) * 4;
        if bytes.len() as u64 != expected {
            return Err(KbError::SizeMismatch {
                expected,
                actual: bytes.len() as u64,
                count: manifest.count,
                dim: manifest.dim,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::from_flat(manifest.dim, manifest.count, data, manifest.normalized)
    }

    /// Writes `vectors.bin` (little-endian) and its manifest.
    pub fn save(&self, manifest_path: &Path, vectors_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(vectors_path, bytes).map_err(|e| KbError::io(vectors_path, e))?;
        let manifest = VectorManifest {
            dim: self.dim,
            count: self.count,
            dtype: VectorManifest::DTYPE.into(),
            normalized: true,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(manifest_path, json).map_err(|e| KbError::io(manifest_path, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, row: usize) -> Option<&[f32]> {
        (row < self.count).then(|| &self.data[row * self.dim..(row + 1) * self.dim])
    }
}

/// Normalizes a query vector into `f64`, validating dimension and finiteness.
fn normalize_query(query: &[f32], dim: usize) -> Result<Vec<f64>> {
    if query.len() != dim {
        return Err(KbError::DimensionMismatch {
            expected: dim,
            actual: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(KbError::NonFiniteQuery);
    }
    let norm = query.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(KbError::ZeroQuery);
    }
    Ok(query.iter().map(|&x| f64::from(x) / norm).collect())
}

/// Orders hits by similarity descending, then doc_id ascending.
fn hit_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Immutable, validated knowledge base.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    vectors: VectorStore,
}

/// Summary of a written index bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub bundle_schema: u32,
    pub docs: usize,
    pub dim: usize,
    pub vectors: usize,
    pub digest: String,
}

impl KnowledgeBase {
    pub fn new(docs: Vec<Document>, vectors: VectorStore) -> Result<Self> {
        let mut docs = docs;
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate()?;
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(KbError::DuplicateDoc(doc.doc_id.clone()));
            }
            if let Some(&row) = doc.embedding_rows.iter().find(|&&r| r >= vectors.count()) {
                return Err(KbError::RowOutOfRange {
                    doc_id: doc.doc_id.clone(),
                    row,
                    count: vectors.count(),
                });
            }
        }
        Ok(Self {
            docs,
            by_id,
            vectors,
        })
    }

    pub fn ingest(docs_path: &Path, manifest_path: &Path, vectors_path: &Path) -> Result<Self> {
        let docs: Vec<Document> = read_jsonl(docs_path)?;
        let vectors = VectorStore::load(manifest_path, vectors_path)?;
        Self::new(docs, vectors)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    /// Documents in ascending `doc_id` order.
    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn vectors(&self) -> &VectorStore {
        &self.vectors
    }

    /// Cosine similarity of a document to a normalized query: the maximum
    /// over its image rows. `None` for documents without embeddings.
    fn doc_similarity(&self, doc: &Document, query: &[f64]) -> Option<f64> {
        doc.embedding_rows
            .iter()
            .map(|&row| {
                let v = self.vectors.row(row).expect("rows validated at ingest");
                v.iter()
                    .zip(query)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0)
            })
            .reduce(f64::max)
    }

    /// Exhaustive top-k cosine retrieval.
    pub fn retrieve_topk(&self, query: &[f32], k: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        let query = normalize_query(query, self.dim())?;
        let mut scored: Vec<(f64, &str)> = self
            .docs
            .iter()
            .filter_map(|d| self.doc_similarity(d, &query).map(|s| (s, d.doc_id.as_str())))
            .collect();
        let keep = k.min(scored.len());
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep, hit_order);
            scored.truncate(keep);
        }
        scored.sort_by(hit_order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (similarity, doc_id))| RetrievalHit {
                doc_id: doc_id.to_string(),
                similarity: Some(similarity),
                rank: i + 1,
            })
            .collect())
    }

    /// Writes a canonical bundle (`docs.jsonl`, `vectors.bin`,
    /// `manifest.json`, `bundle.json`). Identical content always produces an
    /// identical digest regardless of the original document order.
    pub fn write_bundle(&self, dir: &Path) -> Result<BundleInfo> {
        fs::create_dir_all(dir).map_err(|e| KbError::io(dir, e))?;
        let docs_path = dir.join("docs.jsonl");
        let manifest_path = dir.join("manifest.json");
        let vectors_path = dir.join("vectors.bin");
        write_jsonl(&docs_path, &self.docs)?;
        self.vectors.save(&manifest_path, &vectors_path)?;

        let mut hasher = Sha256::new();
        for path in [&docs_path, &manifest_path, &vectors_path] {
            let bytes = fs::read(path).map_err(|e| KbError::io(path, e))?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        let info = BundleInfo {
            bundle_schema: 1,
            docs: self.len(),
            dim: self.dim(),
            vectors: self.vectors.count(),
            digest: hex::encode(hasher.finalize()),
        };
        let info_path = dir.join("bundle.json");
        let mut json = serde_json::to_string_pretty(&info).expect("bundle info serializes");
        json.push('\n');
        fs::write(&info_path, json).map_err(|e| KbError::io(&info_path, e))?;
        Ok(info)
    }

    pub fn open_bundle(dir: &Path) -> Result<Self> {
        Self::ingest(
            &dir.join("docs.jsonl"),
            &dir.join("manifest.json"),
            &dir.join("vectors.bin"),
        )
    }
}

/// A validated query set, optionally with query-image vectors.
#[derive(Debug, Clone)]
pub struct QuerySet {
    queries: Vec<QueryRecord>,
    vectors: Option<VectorStore>,
}

impl QuerySet {
    pub fn new(queries: Vec<QueryRecord>, vectors: Option<VectorStore>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(queries.len());
        for q in &queries {
            q.validate()?;
            if !seen.insert(q.query_id.as_str()) {
                return Err(KbError::DuplicateQuery(q.query_id.clone()));
            }
            if let (Some(store), Some(row)) = (&vectors, q.embedding_row) {
                if row >= store.count() {
                    return Err(KbError::QueryRowOutOfRange {
                        query_id: q.query_id.clone(),
                        row,
                        count: store.count(),
                    });
                }
            }
        }
        Ok(Self { queries, vectors })
    }

    pub fn load(queries_path: &Path, vectors: Option<(&Path, &Path)>) -> Result<Self> {
        let queries = read_jsonl(queries_path)?;
        let vectors = vectors
            .map(|(manifest, bin)| VectorStore::load(manifest, bin))
            .transpose()?;
        Self::new(queries, vectors)
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    pub fn vectors(&self) -> Option<&VectorStore> {
        self.vectors.as_ref()
    }

    pub fn into_parts(self) -> (Vec<QueryRecord>, Option<VectorStore>) {
        (self.queries, self.vectors)
    }
}

#[derive(Debug, Deserialize)]
struct RankedRunLine {
    query_id: String,
    doc_ids: Vec<String>,
}

/// Externally produced per-query rankings, consumed verbatim.
#[derive(Debug, Clone, Default)]
pub struct RankedRun {
    rankings: HashMap<String, Vec<String>>,
}

impl RankedRun {
    pub fn new(entries: Vec<(String, Vec<String>)>, kb: &KnowledgeBase) -> Result<Self> {
        let mut rankings = HashMap::with_capacity(entries.len());
        for (query_id, doc_ids) in entries {
            if let Some(unknown) = doc_ids.iter().find(|d| kb.get(d).is_none()) {
                return Err(KbError::UnknownDoc {
                    query_id,
                    doc_id: unknown.clone(),
                });
            }
            if rankings.contains_key(&query_id) {
                return Err(KbError::DuplicateQuery(query_id));
            }
            rankings.insert(query_id, doc_ids);
        }
        Ok(Self { rankings })
    }

    pub fn load(path: &Path, kb: &KnowledgeBase) -> Result<Self> {
        let lines: Vec<RankedRunLine> = read_jsonl(path)?;
        Self::new(
            lines.into_iter().map(|l| (l.query_id, l.doc_ids)).collect(),
            kb,
        )
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[String]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }
}

/// Where per-query candidate lists come from.
#[derive(Debug, Clone)]
pub enum QuerySource {
    /// Dense retrieval using query-image vectors indexed by `embedding_row`.
    Dense(VectorStore),
    /// Rankings supplied by an external retriever.
    Ranked(RankedRun),
}

/// Knowledge base plus a query source; the retriever used by the pipeline
/// and the dataset builders.
#[derive(Debug, Clone)]
pub struct Retriever {
    kb: Arc<KnowledgeBase>,
    source: QuerySource,
}

impl Retriever {
    pub fn new(kb: Arc<KnowledgeBase>, source: QuerySource) -> Self {
        Self { kb, source }
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn source(&self) -> &QuerySource {
        &self.source
    }

    /// Top-k candidates for `query`. Ranked runs are truncated to `k`.
    pub fn retrieve(&self, query: &QueryRecord, k: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        match &self.source {
            QuerySource::Dense(store) => {
                let row = query
                    .embedding_row
                    .ok_or_else(|| KbError::MissingQueryVector(query.query_id.clone()))?;
                let vector = store.row(row).ok_or_else(|| KbError::QueryRowOutOfRange {
                    query_id: query.query_id.clone(),
                    row,
                    count: store.count(),
                })?;
                self.kb.retrieve_topk(vector, k)
            }
            QuerySource::Ranked(run) => {
                let ranking = run
                    .ranking(&query.query_id)
                    .ok_or_else(|| KbError::MissingRanking(query.query_id.clone()))?;
                Ok(ranking
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, doc_id)| RetrievalHit {
                        doc_id: doc_id.clone(),
                        similarity: None,
                        rank: i + 1,
                    })
                    .collect())
            }
        }
    }

    /// Resolves hits to documents, preserving hit order.
    pub fn documents(&self, hits: &[RetrievalHit]) -> Vec<Document> {
        hits.iter()
            .filter_map(|h| self.kb.get(&h.doc_id).cloned())
            .collect()
    }
}

/// Reads a JSONL file, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| KbError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KbError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| KbError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| KbError::io(path, e))?;
    file.write_all(&buf).map_err(|e| KbError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, rows: Vec<usize>) -> Document {
        Document {
            doc_id: id.into(),
            page_title: format!("Page {id}"),
            section_id: "0".into(),
            text: format!("text of {id}"),
            embedding_rows: rows,
        }
    }

    #[test]
    fn orthogonal_basis_ranks_exact_match_first() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let kb = KnowledgeBase::new(vec![doc("B", vec![1]), doc("A", vec![0])], store).unwrap();
        let hits = kb.retrieve_topk(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].doc_id, "A");
        assert_eq!(hits[0].similarity, Some(1.0));
        assert_eq!(hits[0].rank, 1);
        assert_eq!(hits[1].doc_id, "B");
        assert_eq!(hits[1].similarity, Some(0.0));
        assert_eq!(hits[1].rank, 2);
    }

    #[test]
    fn multi_image_document_scores_by_best_image() {
        let store =
            VectorStore::from_rows(2, &[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let kb = KnowledgeBase::new(vec![doc("A", vec![0, 1]), doc("B", vec![2])], store).unwrap();
        let hits = kb.retrieve_topk(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].doc_id, "A");
        assert_eq!(hits[0].similarity, Some(1.0));
    }

    #[test]
    fn ties_break_by_doc_id() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let kb = KnowledgeBase::new(
            vec![doc("c", vec![0]), doc("a", vec![0]), doc("b", vec![0])],
            store,
        )
        .unwrap();
        let ids: Vec<_> = kb
            .retrieve_topk(&[3.0, 0.0], 2)
            .unwrap()
            .into_iter()
            .map(|h| h.doc_id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let kb = KnowledgeBase::new(vec![doc("a", vec![0])], store).unwrap();
        assert_eq!(kb.retrieve_topk(&[1.0, 1.0], 5).unwrap().len(), 1);
    }

    #[test]
    fn out_of_range_row_is_rejected() {
        let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![1.0, i as f32]).collect();
        let store = VectorStore::from_rows(2, &rows).unwrap();
        let err = KnowledgeBase::new(vec![doc("a", vec![10])], store).unwrap_err();
        assert!(err.to_string().contains("embedding row out of range"), "{err}");
    }

    #[test]
    fn duplicate_doc_is_rejected() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let err = KnowledgeBase::new(vec![doc("a", vec![0]), doc("a", vec![0])], store).unwrap_err();
        assert!(matches!(err, KbError::DuplicateDoc(id) if id == "a"));
    }

    #[test]
    fn zero_vectors_are_rejected() {
        let err = VectorStore::from_rows(2, &[vec![0.0, 0.0]]).unwrap_err();
        assert!(err.to_string().contains("zero vector"));
    }

    #[test]
    fn query_errors() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let kb = KnowledgeBase::new(vec![doc("a", vec![0])], store).unwrap();
        assert!(matches!(
            kb.retrieve_topk(&[1.0, 0.0, 0.0], 1),
            Err(KbError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert!(matches!(kb.retrieve_topk(&[f32::NAN, 0.0], 1), Err(KbError::NonFiniteQuery)));
        assert!(matches!(kb.retrieve_topk(&[1.0, 0.0], 0), Err(KbError::InvalidK)));
    }

    #[test]
    fn query_record_requires_exactly_one_answer_kind() {
        let mut q = QueryRecord {
            query_id: "q".into(),
            question: "?".into(),
            embedding_row: None,
            gold_answers: Some(vec!["x".into()]),
            answer_range: Some([1.0, 2.0]),
            split_tags: vec![],
        };
        assert!(q.validate().is_err());
        q.gold_answers = None;
        assert!(q.validate().is_ok());
        q.answer_range = Some([3.0, 2.0]);
        assert!(q.validate().is_err());
    }

    #[test]
    fn ranked_run_passes_rankings_through() {
        let store = VectorStore::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let kb = Arc::new(
            KnowledgeBase::new(vec![doc("d1", vec![0]), doc("d2", vec![0])], store).unwrap(),
        );
        let run = RankedRun::new(
            vec![
                ("q1".into(), vec!["d2".into(), "d1".into()]),
                ("q2".into(), vec![]),
            ],
            &kb,
        )
        .unwrap();
        let retriever = Retriever::new(kb.clone(), QuerySource::Ranked(run));
        let mut q = QueryRecord {
            query_id: "q1".into(),
            question: "?".into(),
            embedding_row: None,
            gold_answers: Some(vec!["x".into()]),
            answer_range: None,
            split_tags: vec![],
        };
        let ids: Vec<_> = retriever
            .retrieve(&q, 5)
            .unwrap()
            .into_iter()
            .map(|h| h.doc_id)
            .collect();
        assert_eq!(ids, ["d2", "d1"]);
        q.query_id = "q2".into();
        assert!(retriever.retrieve(&q, 5).unwrap().is_empty());

        let err = RankedRun::new(vec![("q".into(), vec!["nope".into()])], &kb).unwrap_err();
        assert!(matches!(err, KbError::UnknownDoc { .. }));
        let err = RankedRun::new(
            vec![("q".into(), vec![]), ("q".into(), vec![])],
            &kb,
        )
        .unwrap_err();
        assert!(matches!(err, KbError::DuplicateQuery(_)));
    }
}
