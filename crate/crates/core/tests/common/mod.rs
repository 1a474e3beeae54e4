#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kbrag::gateway::{
    Backend, ConditionedEntry, ConsistRequest, ConsistencyEntry, DirectEntry, ErrorResponse,
    GatewayError, GenerateRequest, MockBackend, OracleTruthTable, PromptId, ScoreTagsRequest,
    WireQuery,
};
use kbrag::prompts::PromptPack;
use kbrag::{Document, QueryRecord};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn query(id: &str, question: &str, gold: &[&str]) -> QueryRecord {
    QueryRecord {
        query_id: id.into(),
        question: question.into(),
        embedding_row: None,
        gold_answers: Some(gold.iter().map(|s| s.to_string()).collect()),
        answer_range: None,
        split_tags: vec![],
    }
}

pub fn doc(id: &str, title: &str, text: &str) -> Document {
    Document {
        doc_id: id.into(),
        page_title: title.into(),
        section_id: "0".into(),
        text: text.into(),
        embedding_rows: vec![0],
    }
}

/// Truth table behind the protocol fixtures.
pub fn golden_table() -> OracleTruthTable {
    let mut t = OracleTruthTable::default();
    t.direct.insert(
        "q-easy".into(),
        DirectEntry {
            answer: "Paris".into(),
            correct: true,
        },
    );
    t.direct.insert(
        "q-hard".into(),
        DirectEntry {
            answer: "Hudson Bay".into(),
            correct: false,
        },
    );
    for (q, d, answer, correct) in [
        ("q-hard", "d-fix", "Western Atlantic", true),
        ("q-hard", "d-fix2", "western Atlantic Ocean", true),
        ("q-easy", "d-break", "Lyon", false),
        ("q-easy", "d-same", "Paris", true),
    ] {
        t.conditioned.push(ConditionedEntry {
            query_id: q.into(),
            doc_id: d.into(),
            answer: answer.into(),
            correct,
        });
    }
    t.consistency.insert(
        "q-hard".into(),
        ConsistencyEntry {
            consistent_doc_ids: vec!["d-fix".into(), "d-fix2".into()],
            summary: "Both passages place the species in the Western Atlantic.".into(),
            answer: None,
        },
    );
    t
}

pub fn golden_docs() -> Vec<Document> {
    vec![
        doc("d-fix", "Atlantic goliath grouper", "Found in the Western Atlantic, from Florida to Brazil."),
        doc("d-noise", "Grouper (disambiguation)", "Grouper may refer to several fish genera."),
        doc("d-fix2", "Epinephelus itajara", "A saltwater fish of the western Atlantic Ocean."),
        doc("d-break", "Lyon", "Lyon is the third-largest city of France."),
        doc("d-same", "Paris", "Paris is the capital and largest city of France."),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    ScoreTags,
    Generate,
    Consist,
}

impl Endpoint {
    pub fn path(self) -> &'static str {
        match self {
            Endpoint::ScoreTags => "/v1/score_tags",
            Endpoint::Generate => "/v1/generate",
            Endpoint::Consist => "/v1/consist",
        }
    }

    pub fn from_name(name: &str) -> Self {
        let kind = &name[3..];
        if kind.starts_with("score_tags") {
            Endpoint::ScoreTags
        } else if kind.starts_with("generate") {
            Endpoint::Generate
        } else if kind.starts_with("consist") {
            Endpoint::Consist
        } else {
            panic!("fixture {name} names no endpoint")
        }
    }
}

/// One request/response exchange.
pub struct Fixture {
    pub name: String,
    pub endpoint: Endpoint,
    pub request: String,
    pub response: String,
    pub status: u16,
}

fn wire(q: &QueryRecord) -> WireQuery {
    q.into()
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap()
}

/// Request bodies of the twelve protocol fixtures, built from the default
/// prompt pack.
pub fn fixture_requests() -> Vec<(&'static str, String)> {
    let p = PromptPack::default();
    let easy = query("q-easy", "Which city is shown in this image?", &["Paris"]);
    let hard = query("q-hard", "Where does this fish live?", &["Western Atlantic"]);
    let unknown = query("q-unknown", "What is this?", &["x"]);
    let docs = golden_docs();
    let score = |q: &QueryRecord, d: Option<&Document>, id: PromptId, tags: [&str; 2]| ScoreTagsRequest {
        prompt_id: id,
        prompt: match d {
            Some(d) => p.render_srt(q, d),
            None => p.render_ret(q),
        },
        query: wire(q),
        document: d.cloned(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
    };
    let generate = |q: &QueryRecord, ctx: Vec<Document>, summary: Option<&str>| GenerateRequest {
        prompt_id: PromptId::Vqa,
        prompt: p.render_vqa(q, &ctx, summary),
        query: wire(q),
        context: ctx,
        summary: summary.map(str::to_string),
    };
    let consist = |q: &QueryRecord, ds: Vec<Document>| ConsistRequest {
        prompt_id: PromptId::Cst,
        prompt: p.render_cst(q, &ds),
        query: wire(q),
        documents: ds,
    };
    vec![
        ("01_score_tags_ret_direct_correct", to_json(&score(&easy, None, PromptId::Ret, ["[Ret]", "[NoRet]"]))),
        ("02_score_tags_ret_direct_wrong", to_json(&score(&hard, None, PromptId::Ret, ["[Ret]", "[NoRet]"]))),
        ("03_score_tags_srt_fixes", to_json(&score(&hard, Some(&docs[0]), PromptId::Srt, ["[Rel]", "[NoRel]"]))),
        ("04_score_tags_srt_breaks", to_json(&score(&easy, Some(&docs[3]), PromptId::Srt, ["[Rel]", "[NoRel]"]))),
        ("05_score_tags_srt_unchanged", to_json(&score(&easy, Some(&docs[4]), PromptId::Srt, ["[Rel]", "[NoRel]"]))),
        ("06_score_tags_unknown_query", to_json(&score(&unknown, None, PromptId::Ret, ["[Ret]", "[NoRet]"]))),
        ("07_score_tags_srt_without_document", to_json(&score(&hard, None, PromptId::Srt, ["[Rel]", "[NoRel]"]))),
        ("08_generate_direct", to_json(&generate(&hard, vec![], None))),
        ("09_generate_first_conditioned_wins", to_json(&generate(&hard, vec![docs[1].clone(), docs[2].clone(), docs[0].clone()], None))),
        ("10_generate_summary", to_json(&generate(&hard, vec![], Some("Both passages place the species in the Western Atlantic.")))),
        ("11_consist_keeps_subset", to_json(&consist(&hard, vec![docs[0].clone(), docs[1].clone(), docs[2].clone()]))),
        ("12_consist_no_entry_keeps_all", to_json(&consist(&easy, vec![docs[3].clone(), docs[4].clone()]))),
    ]
}

/// Response body and status the mock oracle gives for a raw request body.
pub fn mock_exchange(backend: &MockBackend, endpoint: Endpoint, body: &str) -> (String, u16) {
    fn finish<T: serde::Serialize>(r: Result<T, GatewayError>) -> (String, u16) {
        match r {
            Ok(v) => (to_json(&v), 200),
            Err(e) => (to_json(&ErrorResponse { error: e.to_string() }), e.status()),
        }
    }
    match endpoint {
        Endpoint::ScoreTags => finish(backend.score_tags(&serde_json::from_str(body).unwrap())),
        Endpoint::Generate => finish(backend.generate(&serde_json::from_str(body).unwrap())),
        Endpoint::Consist => finish(backend.consist(&serde_json::from_str(body).unwrap())),
    }
}

/// Writes the fixture files from the mock oracle.
pub fn bless_fixtures() {
    let dir = golden_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let table = golden_table();
    std::fs::write(dir.join("truth_table.json"), table.to_json_pretty()).unwrap();
    let backend = MockBackend::new(table);
    let mut statuses = serde_json::Map::new();
    for (name, request) in fixture_requests() {
        let (response, status) = mock_exchange(&backend, Endpoint::from_name(name), &request);
        std::fs::write(dir.join(format!("{name}.request.json")), &request).unwrap();
        std::fs::write(dir.join(format!("{name}.response.json")), &response).unwrap();
        statuses.insert(name.to_string(), status.into());
    }
    std::fs::write(
        dir.join("status.json"),
        serde_json::to_string_pretty(&statuses).unwrap() + "\n",
    )
    .unwrap();
}

/// The committed fixtures, in name order.
pub fn load_fixtures() -> Vec<Fixture> {
    let dir = golden_dir();
    let statuses: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("status.json")).unwrap()).unwrap();
    statuses
        .iter()
        .map(|(name, status)| Fixture {
            name: name.clone(),
            endpoint: Endpoint::from_name(name),
            request: std::fs::read_to_string(dir.join(format!("{name}.request.json"))).unwrap(),
            response: std::fs::read_to_string(dir.join(format!("{name}.response.json"))).unwrap(),
            status: status.as_u64().unwrap() as u16,
        })
        .collect()
}

/// Parses `body` as the wire type for the exchange and serializes it back.
pub fn reserialize(endpoint: Endpoint, is_request: bool, status: u16, body: &str) -> String {
    use kbrag::gateway::{ConsistResponse, GenerateResponse, ScoreTagsResponse};
    fn again<T: serde::de::DeserializeOwned + serde::Serialize>(body: &str) -> String {
        to_json(&serde_json::from_str::<T>(body).unwrap())
    }
    if !is_request && status != 200 {
        return again::<ErrorResponse>(body);
    }
    match (endpoint, is_request) {
        (Endpoint::ScoreTags, true) => again::<ScoreTagsRequest>(body),
        (Endpoint::ScoreTags, false) => again::<ScoreTagsResponse>(body),
        (Endpoint::Generate, true) => again::<GenerateRequest>(body),
        (Endpoint::Generate, false) => again::<GenerateResponse>(body),
        (Endpoint::Consist, true) => again::<ConsistRequest>(body),
        (Endpoint::Consist, false) => again::<ConsistResponse>(body),
    }
}

/// Posts a raw body and returns (status, body).
pub fn post_raw(base_url: &str, endpoint: Endpoint, body: &str) -> (u16, String) {
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(format!("{base_url}{}", endpoint.path()))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.text().unwrap())
}
