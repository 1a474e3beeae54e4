//! C ABI for the kbrag engine.
//!
//! Every function returns a [`KbragStatus`]; on failure the message is
//! available from [`kbrag_last_error`] on the same thread. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`kbrag_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use kbrag::gateway::{GatewayError, HttpBackend, HttpConfig, MockBackend};
use kbrag::kb::{KbError, QuerySource, VectorStore};
use kbrag::prompts::PromptPack;
use kbrag::tokens::{self, TokenError};
use kbrag::{pipeline, Gateway, KnowledgeBase, OracleTruthTable, PipelineConfig, QueryRecord, RetLabel, Retriever};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbragStatus {
    Ok = 0,
    NullArgument = 1,
    Invalid = 2,
    Backend = 3,
    Io = 4,
    Panic = 5,
}

/// Knowledge base handle.
pub struct KbragKb {
    kb: Arc<KnowledgeBase>,
}

/// Model gateway handle (mock oracle or HTTP backend).
pub struct KbragGateway {
    gateway: Gateway,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(KbragStatus, String);

impl From<KbError> for Failure {
    fn from(e: KbError) -> Self {
        let status = match e {
            KbError::Io { .. } => KbragStatus::Io,
            _ => KbragStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure(KbragStatus::Backend, e.to_string())
    }
}

impl From<TokenError> for Failure {
    fn from(e: TokenError) -> Self {
        match e {
            TokenError::Gateway(g) => g.into(),
            other => Failure(KbragStatus::Invalid, other.to_string()),
        }
    }
}

fn invalid(message: impl ToString) -> Failure {
    Failure(KbragStatus::Invalid, message.to_string())
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KbragStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KbragStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("panic inside kbrag");
            KbragStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KbragStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(KbragStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next kbrag call on the same thread.
#[no_mangle]
pub extern "C" fn kbrag_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kbrag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Two-way softmax: probability of the positive tag.
///
/// # Safety
/// `out` must point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn kbrag_softmax_pair(z_pos: f64, z_neg: f64, out: *mut f64) -> KbragStatus {
    guard(|| {
        null_check(out, "out")?;
        *out = tokens::softmax_pair(z_pos, z_neg)?.value();
        Ok(())
    })
}

/// Retrieval gate from the `[Ret]`/`[NoRet]` logits. `out_retrieve` is set
/// to true iff the score is strictly above `gamma`.
///
/// # Safety
/// `out_score` and `out_retrieve` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_decide_ret(
    z_ret: f64,
    z_no_ret: f64,
    gamma: f64,
    out_score: *mut f64,
    out_retrieve: *mut bool,
) -> KbragStatus {
    guard(|| {
        null_check(out_score, "out_score")?;
        null_check(out_retrieve, "out_retrieve")?;
        let decision = tokens::decide_ret(tokens::softmax_pair(z_ret, z_no_ret)?, gamma)?;
        *out_score = decision.score.value();
        *out_retrieve = decision.label == RetLabel::Ret;
        Ok(())
    })
}

/// Opens an index bundle directory written by `kbrag ingest`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_kb_open(dir: *const c_char, out: *mut *mut KbragKb) -> KbragStatus {
    guard(|| {
        null_check(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        let kb = KnowledgeBase::open_bundle(Path::new(dir))?;
        *out = Box::into_raw(Box::new(KbragKb { kb: Arc::new(kb) }));
        Ok(())
    })
}

/// # Safety
/// `kb` must be NULL or a live handle from [`kbrag_kb_open`].
#[no_mangle]
pub unsafe extern "C" fn kbrag_kb_free(kb: *mut KbragKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Number of documents, or 0 for a NULL handle.
///
/// # Safety
/// `kb` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kbrag_kb_len(kb: *const KbragKb) -> usize {
    kb.as_ref().map_or(0, |h| h.kb.len())
}

/// Embedding dimension, or 0 for a NULL handle.
///
/// # Safety
/// `kb` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kbrag_kb_dim(kb: *const KbragKb) -> usize {
    kb.as_ref().map_or(0, |h| h.kb.dim())
}

/// Top-k cosine retrieval. Writes a JSON array of
/// `{"doc_id", "similarity", "rank"}` objects to `out_json`.
///
/// # Safety
/// `query` must point to `len` floats; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_kb_retrieve(
    kb: *const KbragKb,
    query: *const f32,
    len: usize,
    k: usize,
    out_json: *mut *mut c_char,
) -> KbragStatus {
    guard(|| {
        null_check(kb, "kb")?;
        null_check(query, "query")?;
        null_check(out_json, "out_json")?;
        let vector = std::slice::from_raw_parts(query, len);
        let hits = (*kb).kb.retrieve_topk(vector, k)?;
        write_string(out_json, serde_json::to_string(&hits).expect("hits serialize"))
    })
}

/// Gateway backed by the mock oracle loaded from a truth-table JSON file.
///
/// # Safety
/// `table_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_gateway_mock(
    table_path: *const c_char,
    out: *mut *mut KbragGateway,
) -> KbragStatus {
    guard(|| {
        null_check(out, "out")?;
        let path = str_arg(table_path, "table_path")?;
        let table = OracleTruthTable::load(Path::new(path)).map_err(invalid)?;
        let gateway = Gateway::new(Arc::new(MockBackend::new(table)), PromptPack::default());
        *out = Box::into_raw(Box::new(KbragGateway { gateway }));
        Ok(())
    })
}

/// Gateway that talks to a backend over HTTP with default timeouts.
///
/// # Safety
/// `base_url` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_gateway_http(
    base_url: *const c_char,
    out: *mut *mut KbragGateway,
) -> KbragStatus {
    guard(|| {
        null_check(out, "out")?;
        let url = str_arg(base_url, "base_url")?;
        let backend = HttpBackend::new(url, HttpConfig::default())?;
        let gateway = Gateway::new(Arc::new(backend), PromptPack::default());
        *out = Box::into_raw(Box::new(KbragGateway { gateway }));
        Ok(())
    })
}

/// # Safety
/// `gateway` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kbrag_gateway_free(gateway: *mut KbragGateway) {
    if !gateway.is_null() {
        drop(Box::from_raw(gateway));
    }
}

/// Answers one query and writes its trace as JSON to `out_json`.
///
/// `query_json` is a query record; `vector`/`len` is its image embedding
/// (may be NULL when retrieval is never needed). `config_json` may be NULL
/// for the default configuration. Per-query failures are reported inside
/// the trace, not through the status.
///
/// # Safety
/// Pointers must be valid as described; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kbrag_run_query(
    kb: *const KbragKb,
    gateway: *const KbragGateway,
    query_json: *const c_char,
    vector: *const f32,
    len: usize,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> KbragStatus {
    guard(|| {
        null_check(kb, "kb")?;
        null_check(gateway, "gateway")?;
        null_check(out_json, "out_json")?;
        let mut query: QueryRecord =
            serde_json::from_str(str_arg(query_json, "query_json")?).map_err(invalid)?;
        query.validate()?;
        let config: PipelineConfig = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(invalid)?
        };
        config.validate().map_err(invalid)?;
        let kb = &(*kb).kb;
        let store = if vector.is_null() {
            query.embedding_row = None;
            VectorStore::from_rows(kb.dim(), &[])?
        } else {
            query.embedding_row = Some(0);
            VectorStore::from_rows(kb.dim(), &[std::slice::from_raw_parts(vector, len).to_vec()])?
        };
        let retriever = Retriever::new(kb.clone(), QuerySource::Dense(store));
        let trace = pipeline::run_query(&query, &retriever, &config, &(*gateway).gateway);
        write_string(out_json, serde_json::to_string(&trace).expect("trace serializes"))
    })
}
