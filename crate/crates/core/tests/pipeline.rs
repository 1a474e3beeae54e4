mod common;

use std::sync::Arc;

use common::{doc, query};
use kbrag::gateway::{server, ConditionedEntry, DirectEntry, HttpBackend, HttpConfig, MockBackend};
use kbrag::kb::{QuerySource, VectorStore};
use kbrag::pipeline::{self, ErrorKind, StageFlags};
use kbrag::prompts::PromptPack;
use kbrag::synth::{ablation_scenario, ScenarioSpec};
use kbrag::tokens::{self, Provenance};
use kbrag::{Gateway, KnowledgeBase, OracleTruthTable, PipelineConfig, RankedRun, RetLabel, Retriever};

fn ranked_fixture() -> (Retriever, OracleTruthTable) {
    let docs: Vec<_> = (1..=9)
        .map(|i| {
            let mut d = doc(&format!("d{i}"), &format!("Page {i}"), &format!("text {i}"));
            d.embedding_rows = vec![i - 1];
            d
        })
        .collect();
    let rows: Vec<Vec<f32>> = (0..9).map(|i| vec![1.0, i as f32]).collect();
    let kb = Arc::new(KnowledgeBase::new(docs, VectorStore::from_rows(2, &rows).unwrap()).unwrap());
    let run = RankedRun::new(
        vec![
            ("q7".into(), ["d3", "d5", "d7", "d1", "d2"].map(String::from).to_vec()),
            ("qe".into(), ["d1", "d2", "d3", "d4", "d5"].map(String::from).to_vec()),
        ],
        &kb,
    )
    .unwrap();
    let mut table = OracleTruthTable::default();
    table.direct.insert(
        "q7".into(),
        DirectEntry {
            answer: "Hudson Bay".into(),
            correct: false,
        },
    );
    table.direct.insert(
        "qe".into(),
        DirectEntry {
            answer: "Paris".into(),
            correct: true,
        },
    );
    table.conditioned.push(ConditionedEntry {
        query_id: "q7".into(),
        doc_id: "d7".into(),
        answer: "Western Atlantic".into(),
        correct: true,
    });
    table.conditioned.push(ConditionedEntry {
        query_id: "q7".into(),
        doc_id: "d5".into(),
        answer: "Hudson Bay".into(),
        correct: false,
    });
    (Retriever::new(kb, QuerySource::Ranked(run)), table)
}

#[test]
fn only_flipping_document_leads_the_context() {
    let (retriever, table) = ranked_fixture();
    let gw = Gateway::mock(table);
    let q = query("q7", "Where does this fish live?", &["Western Atlantic"]);
    let config = PipelineConfig {
        stage_flags: StageFlags {
            ret: true,
            srt: true,
            mct: false,
        },
        ..PipelineConfig::default()
    };
    let trace = pipeline::run_query(&q, &retriever, &config, &gw);
    assert_eq!(trace.error, None);
    assert_eq!(trace.ret_decision.unwrap().label, RetLabel::Ret);
    assert_eq!(trace.final_context.docs[0].doc_id, "d7");
    assert_eq!(trace.final_context.strategy_provenance, Provenance::Srt);
    assert_eq!(trace.answer, "Western Atlantic");
    assert_eq!(trace.correct, Some(true));
    let rel: Vec<_> = trace.srt_scores.iter().map(|s| (s.doc_id.as_str(), s.srt_score.value())).collect();
    assert_eq!(rel.len(), 5);
    assert!(rel.iter().all(|&(d, s)| if d == "d7" { s > 0.5 } else { s <= 0.5 }));
}

#[test]
fn stages_off_answers_from_top_k_in_retrieval_order() {
    let (retriever, table) = ranked_fixture();
    let gw = Gateway::mock(table);
    let q = query("q7", "Where does this fish live?", &["Western Atlantic"]);
    let config = PipelineConfig {
        stage_flags: StageFlags::NONE,
        ..PipelineConfig::default()
    };
    let trace = pipeline::run_query(&q, &retriever, &config, &gw);
    let ids: Vec<_> = trace.final_context.docs.iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(ids, ["d3", "d5", "d7", "d1", "d2"]);
    assert_eq!(trace.final_context.strategy_provenance, Provenance::None);
    assert!(trace.ret_decision.is_none() && trace.srt_scores.is_empty());
    // d5 is the first context document with a conditioned entry.
    let direct = gw.generate(&q, &trace.final_context.docs, None).unwrap();
    assert_eq!(trace.answer, direct.text);
    assert_eq!(trace.answer, "Hudson Bay");
}

#[test]
fn direct_correct_query_skips_retrieval() {
    let (retriever, table) = ranked_fixture();
    let gw = Gateway::mock(table);
    let q = query("qe", "Which city?", &["Paris"]);
    let trace = pipeline::run_query(&q, &retriever, &PipelineConfig::default(), &gw);
    assert_eq!(trace.ret_decision.unwrap().label, RetLabel::NoRet);
    assert!(trace.retrieved.is_empty());
    assert!(trace.final_context.docs.is_empty());
    assert_eq!(trace.answer, "Paris");
}

#[test]
fn failures_are_recorded_not_raised() {
    let (retriever, table) = ranked_fixture();
    let gw = Gateway::mock(table);
    let unknown = query("q-missing", "?", &["x"]);
    let trace = pipeline::run_query(&unknown, &retriever, &PipelineConfig::default(), &gw);
    assert_eq!(trace.error.as_ref().unwrap().kind, ErrorKind::Backend);
    assert_eq!(trace.correct, Some(false));
    assert_eq!(trace.score, Some(0.0));

    let http = HttpBackend::new(
        "http://127.0.0.1:9",
        HttpConfig {
            retries: 0,
            ..HttpConfig::default()
        },
    )
    .unwrap();
    let down = Gateway::new(Arc::new(http), PromptPack::default());
    let q = query("q7", "?", &["x"]);
    let trace = pipeline::run_query(&q, &retriever, &PipelineConfig::default(), &down);
    assert!(trace.is_unreachable());

    let traces = pipeline::run_batch(&[q.clone(), q], &retriever, &PipelineConfig::default(), &down, 1).unwrap();
    assert_eq!(traces.len(), 1, "batch stops after the backend is found unreachable");
}

fn small_scenario() -> kbrag::synth::Scenario {
    ablation_scenario(&ScenarioSpec {
        queries: 60,
        docs: 300,
        dim: 16,
        seed: 11,
        ..ScenarioSpec::default()
    })
}

#[test]
fn traces_agree_with_the_token_stack() {
    let s = small_scenario();
    let retriever = s.retriever();
    let gw = Gateway::mock(s.table.clone());
    for flags in ["none", "ret", "srt", "ret,srt", "srt,mct", "ret,srt,mct"] {
        let config = PipelineConfig {
            stage_flags: flags.parse().unwrap(),
            ..PipelineConfig::default()
        };
        for q in s.queries.queries() {
            let trace = pipeline::run_query(q, &retriever, &config, &gw);
            let hits = retriever.retrieve(q, config.k).unwrap();
            let stack = tokens::run_token_stack(q, &hits, &s.kb, &config, &gw).unwrap();
            assert_eq!(trace.final_context, stack.context, "{flags} {}", q.query_id);
            assert_eq!(trace.srt_scores, stack.srt_scores);
            assert_eq!(trace.ret_decision, stack.ret_decision);
            if config.stage_flags.ret {
                if trace.ret_decision.unwrap().label == RetLabel::NoRet {
                    assert!(trace.retrieved.is_empty());
                }
            } else {
                assert_eq!(trace.retrieved, hits);
            }
        }
    }
}

fn serialize(traces: &[kbrag::QueryTrace]) -> String {
    traces.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect()
}

#[test]
fn batches_are_deterministic() {
    let s = small_scenario();
    let retriever = s.retriever();
    let gw = Gateway::mock(s.table.clone());
    let config = PipelineConfig::default();
    let one = serialize(&pipeline::run_batch(s.queries.queries(), &retriever, &config, &gw, 1).unwrap());
    let eight = serialize(&pipeline::run_batch(s.queries.queries(), &retriever, &config, &gw, 8).unwrap());
    let again = serialize(&pipeline::run_batch(s.queries.queries(), &retriever, &config, &gw, 8).unwrap());
    assert_eq!(one, eight);
    assert_eq!(eight, again);

    let handle = server::spawn(Arc::new(MockBackend::new(s.table.clone())), "127.0.0.1:0".parse().unwrap()).unwrap();
    let served = Gateway::new(
        Arc::new(HttpBackend::new(&handle.url(), HttpConfig::default()).unwrap()),
        PromptPack::default(),
    );
    let remote = serialize(&pipeline::run_batch(s.queries.queries(), &retriever, &config, &served, 8).unwrap());
    assert_eq!(one, remote);

    assert!(pipeline::run_batch(&[], &retriever, &config, &gw, 4).unwrap().is_empty());
    assert!(pipeline::run_batch(s.queries.queries(), &retriever, &config, &gw, 0).is_err());
}

#[test]
fn traces_round_trip_through_jsonl() {
    let s = small_scenario();
    let traces = pipeline::run_batch(s.queries.queries(), &s.retriever(), &PipelineConfig::default(), &Gateway::mock(s.table.clone()), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    pipeline::write_traces(&path, &traces).unwrap();
    assert_eq!(pipeline::read_traces(&path).unwrap(), traces);
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["trace_schema"], 1);
}
