use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use kbrag::synth::{ablation_scenario, ScenarioSpec};
use kbrag::QueryTrace;
use kbrag_ffi::*;

fn last_error() -> String {
    let p = kbrag_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    kbrag_string_free(p);
    s
}

#[test]
fn softmax_and_gate() {
    let mut p = 0.0;
    assert_eq!(unsafe { kbrag_softmax_pair(1.0, 1.0, &mut p) }, KbragStatus::Ok);
    assert_eq!(p, 0.5);
    assert!(kbrag_last_error().is_null());

    let (mut score, mut ret) = (0.0, true);
    assert_eq!(
        unsafe { kbrag_decide_ret(0.0, 0.0, 0.5, &mut score, &mut ret) },
        KbragStatus::Ok
    );
    assert!(!ret);
    assert_eq!(
        unsafe { kbrag_decide_ret(3.0, -1.0, 0.5, &mut score, &mut ret) },
        KbragStatus::Ok
    );
    assert!(ret);
    assert!((score - 1.0 / (1.0 + (-4.0f64).exp())).abs() < 1e-15);

    assert_eq!(
        unsafe { kbrag_softmax_pair(f64::NAN, 0.0, &mut p) },
        KbragStatus::Invalid
    );
    assert!(last_error().contains("finite"), "{}", last_error());
    assert_eq!(
        unsafe { kbrag_decide_ret(0.0, 0.0, 1.5, &mut score, &mut ret) },
        KbragStatus::Invalid
    );
    assert_eq!(
        unsafe { kbrag_softmax_pair(0.0, 0.0, ptr::null_mut()) },
        KbragStatus::NullArgument
    );
}

#[test]
fn kb_gateway_and_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec {
        queries: 12,
        docs: 60,
        dim: 8,
        ..ScenarioSpec::default()
    };
    let scenario = ablation_scenario(&spec);
    scenario.write(dir.path()).unwrap();

    let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut kb = ptr::null_mut();
    assert_eq!(unsafe { kbrag_kb_open(dir_c.as_ptr(), &mut kb) }, KbragStatus::Ok);
    assert_eq!(unsafe { kbrag_kb_len(kb) }, 60);
    assert_eq!(unsafe { kbrag_kb_dim(kb) }, 8);

    let vectors = scenario.queries.vectors().unwrap();
    let query = &scenario.queries.queries()[0];
    let row = vectors.row(query.embedding_row.unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { kbrag_kb_retrieve(kb, row.as_ptr(), row.len(), 3, &mut out) },
        KbragStatus::Ok
    );
    let hits: Vec<kbrag::RetrievalHit> = serde_json::from_str(&unsafe { take_string(out) }).unwrap();
    assert_eq!(hits, scenario.kb.retrieve_topk(row, 3).unwrap());

    assert_eq!(
        unsafe { kbrag_kb_retrieve(kb, row.as_ptr(), 3, 3, &mut out) },
        KbragStatus::Invalid
    );

    let table_c = CString::new(dir.path().join("truth_table.json").to_str().unwrap()).unwrap();
    let mut gw = ptr::null_mut();
    assert_eq!(unsafe { kbrag_gateway_mock(table_c.as_ptr(), &mut gw) }, KbragStatus::Ok);

    let retriever = scenario.retriever();
    let gateway = kbrag::Gateway::mock(scenario.table.clone());
    let config = kbrag::PipelineConfig::default();
    for q in scenario.queries.queries() {
        let row = vectors.row(q.embedding_row.unwrap()).unwrap();
        let q_c = CString::new(serde_json::to_string(q).unwrap()).unwrap();
        assert_eq!(
            unsafe { kbrag_run_query(kb, gw, q_c.as_ptr(), row.as_ptr(), row.len(), ptr::null(), &mut out) },
            KbragStatus::Ok
        );
        let trace: QueryTrace = serde_json::from_str(&unsafe { take_string(out) }).unwrap();
        assert_eq!(trace, kbrag::pipeline::run_query(q, &retriever, &config, &gateway));
    }

    let bad = CString::new("{\"query_id\": 1}").unwrap();
    assert_eq!(
        unsafe { kbrag_run_query(kb, gw, bad.as_ptr(), ptr::null(), 0, ptr::null(), &mut out) },
        KbragStatus::Invalid
    );

    unsafe {
        kbrag_gateway_free(gw);
        kbrag_kb_free(kb);
        kbrag_kb_free(ptr::null_mut());
        kbrag_string_free(ptr::null_mut());
    }
}

#[test]
fn open_errors_map_to_status() {
    let mut kb = ptr::null_mut();
    let missing = CString::new("/nonexistent/kbrag/bundle").unwrap();
    assert_eq!(unsafe { kbrag_kb_open(missing.as_ptr(), &mut kb) }, KbragStatus::Io);
    assert!(kb.is_null());
    assert_eq!(unsafe { kbrag_kb_open(ptr::null(), &mut kb) }, KbragStatus::NullArgument);

    let mut gw = ptr::null_mut();
    let url = CString::new("http://127.0.0.1:9").unwrap();
    assert_eq!(unsafe { kbrag_gateway_http(url.as_ptr(), &mut gw) }, KbragStatus::Ok);
    unsafe { kbrag_gateway_free(gw) };
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kbrag.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "kbrag_last_error",
        "kbrag_string_free",
        "kbrag_softmax_pair",
        "kbrag_decide_ret",
        "kbrag_kb_open",
        "kbrag_kb_retrieve",
        "kbrag_gateway_mock",
        "kbrag_gateway_http",
        "kbrag_run_query",
        "KBRAG_STATUS_BACKEND",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"kbrag.h\"\nint main(void) { double p; return kbrag_softmax_pair(0, 0, &p) == KBRAG_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .status()
            .unwrap_or_else(|e| panic!("running {compiler}: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}
