//! Prompt templates for the four model calls.
//!
//! Templates are plain text with `{question}`, `{document}` and `{documents}`
//! placeholders. A pack is loaded from a directory holding `P_RET.txt`,
//! `P_SRT.txt`, `P_CST.txt` and `P_VQA.txt`; missing files fall back to the
//! built-in defaults.

use std::path::Path;

use crate::gateway::PromptId;
use crate::kb::{Document, QueryRecord};

const DEFAULT_RET: &str = include_str!("../prompts/P_RET.txt");
const DEFAULT_SRT: &str = include_str!("../prompts/P_SRT.txt");
const DEFAULT_CST: &str = include_str!("../prompts/P_CST.txt");
const DEFAULT_VQA: &str = include_str!("../prompts/P_VQA.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPack {
    pub ret: String,
    pub srt: String,
    pub cst: String,
    pub vqa: String,
}

impl Default for PromptPack {
    fn default() -> Self {
        Self {
            ret: DEFAULT_RET.to_string(),
            srt: DEFAULT_SRT.to_string(),
            cst: DEFAULT_CST.to_string(),
            vqa: DEFAULT_VQA.to_string(),
        }
    }
}

/// `title: text` block used wherever a document is shown to the model.
pub fn render_document(doc: &Document) -> String {
    format!("{}: {}", doc.page_title, doc.text)
}

/// Context blocks joined in order; a merged summary replaces the documents.
pub fn render_context(docs: &[Document], summary: Option<&str>) -> String {
    match summary {
        Some(s) => s.to_string(),
        None if docs.is_empty() => "(none)".to_string(),
        None => docs
            .iter()
            .map(render_document)
            .collect::<Vec<_>>()
            .join("\n\n"),
    }
}

fn fill(template: &str, question: &str, document: &str, documents: &str) -> String {
    template
        .replace("{question}", question)
        .replace("{documents}", documents)
        .replace("{document}", document)
}

impl PromptPack {
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut pack = Self::default();
        for (id, slot) in [
            (PromptId::Ret, &mut pack.ret),
            (PromptId::Srt, &mut pack.srt),
            (PromptId::Cst, &mut pack.cst),
            (PromptId::Vqa, &mut pack.vqa),
        ] {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        Ok(pack)
    }

    pub fn render_ret(&self, query: &QueryRecord) -> String {
        fill(&self.ret, &query.question, "", "")
    }

    pub fn render_srt(&self, query: &QueryRecord, doc: &Document) -> String {
        fill(&self.srt, &query.question, &render_document(doc), "")
    }

    pub fn render_cst(&self, query: &QueryRecord, docs: &[Document]) -> String {
        let numbered = docs
            .iter()
            .enumerate()
            .map(|(i, d)| format!("[{i}] {}", render_document(d)))
            .collect::<Vec<_>>()
            .join("\n\n");
        fill(&self.cst, &query.question, "", &numbered)
    }

    pub fn render_vqa(&self, query: &QueryRecord, docs: &[Document], summary: Option<&str>) -> String {
        fill(&self.vqa, &query.question, "", &render_context(docs, summary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            page_title: title.into(),
            section_id: "0".into(),
            text: text.into(),
            embedding_rows: vec![0],
        }
    }

    #[test]
    fn context_blocks_follow_order() {
        let docs = [doc("a", "Lion", "big cat"), doc("b", "Tiger", "striped")];
        assert_eq!(
            render_context(&docs, None),
            "Lion: big cat\n\nTiger: striped"
        );
        assert_eq!(render_context(&docs, Some("merged")), "merged");
        assert_eq!(render_context(&[], None), "(none)");
    }

    #[test]
    fn templates_fill_placeholders() {
        let pack = PromptPack {
            ret: "R {question}".into(),
            srt: "S {question} / {document}".into(),
            cst: "C {question}\n{documents}".into(),
            vqa: "V {documents} ? {question}".into(),
        };
        let q = QueryRecord {
            query_id: "q".into(),
            question: "which?".into(),
            embedding_row: None,
            gold_answers: Some(vec!["x".into()]),
            answer_range: None,
            split_tags: vec![],
        };
        let docs = [doc("a", "T1", "x1"), doc("b", "T2", "x2")];
        assert_eq!(pack.render_ret(&q), "R which?");
        assert_eq!(pack.render_srt(&q, &docs[0]), "S which? / T1: x1");
        assert_eq!(pack.render_cst(&q, &docs), "C which?\n[0] T1: x1\n\n[1] T2: x2");
        assert_eq!(pack.render_vqa(&q, &docs[1..], None), "V T2: x2 ? which?");
    }

    #[test]
    fn missing_files_fall_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("P_RET.txt"), "custom {question}").unwrap();
        let pack = PromptPack::load_dir(dir.path()).unwrap();
        assert_eq!(pack.ret, "custom {question}");
        assert_eq!(pack.vqa, PromptPack::default().vqa);
    }
}
