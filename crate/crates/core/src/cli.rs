//! `kbrag` command-line interface.
//!
//! Exit codes: 0 success, 2 validation error, 3 backend error, 4 I/O error.
//! Logs go to stderr; data goes to files or stdout (`--json` for
//! machine-readable output).

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::eval::{self, Matcher, MatcherKind, ReportTable, Sweep};
use crate::forge::{self, Dataset, DatasetKind};
use crate::gateway::{server, Gateway, GatewayError, HttpBackend, HttpConfig, MockBackend, OracleTruthTable};
use crate::kb::{KbError, KnowledgeBase, QuerySet, QuerySource, RankedRun, Retriever, VectorStore};
use crate::pipeline::{self, PipelineConfig, StageFlags};
use crate::prompts::PromptPack;
use crate::synth::{self, ScenarioSpec};
use crate::tokens::{MctStrategy, SrtSelectionMode};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn validation(message: impl ToString) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Self {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Io { .. } => CliError::io(e),
            _ => CliError::validation(e),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(_) => CliError::validation(e),
            _ => CliError {
                code: EXIT_BACKEND,
                message: e.to_string(),
            },
        }
    }
}

impl From<forge::ForgeError> for CliError {
    fn from(e: forge::ForgeError) -> Self {
        match e {
            forge::ForgeError::Io(inner) => inner.into(),
            other => CliError::validation(other),
        }
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        match e {
            eval::EvalError::BackendUnreachable(_) => CliError {
                code: EXIT_BACKEND,
                message: e.to_string(),
            },
            other => CliError::validation(other),
        }
    }
}

impl From<pipeline::PipelineError> for CliError {
    fn from(e: pipeline::PipelineError) -> Self {
        match e {
            pipeline::PipelineError::Kb(inner) => inner.into(),
            other => CliError::validation(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kbrag", version, about = "Knowledge-based multi-modal RAG engine")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate documents and vectors and write an index bundle.
    Ingest(IngestArgs),
    /// Top-k dense retrieval for query vectors.
    Retrieve(RetrieveArgs),
    /// Answer a query set and write traces.
    Run(RunArgs),
    /// Build a RET/SRT/MCT training dataset.
    Build(BuildArgs),
    /// Score traces against gold answers.
    Eval(EvalArgs),
    /// Run the six-row token ablation.
    Ablate(AblateArgs),
    /// Sweep SRT selection sizes or MCT strategies.
    Sweep(SweepArgs),
    /// Serve the mock oracle over the HTTP protocol.
    ServeMock(ServeArgs),
    /// Generate a synthetic scenario (knowledge base, queries, truth table).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Bundle directory (docs.jsonl, manifest.json, vectors.bin).
    #[arg(long)]
    pub kb: PathBuf,
    /// A single query vector, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub vector: Option<Vec<f32>>,
    #[command(flatten)]
    pub data: QueryArgs,
    #[arg(short, long, default_value_t = crate::kb::DEFAULT_TOP_K)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Query vectors; defaults to query_vectors.bin next to the query file.
    #[arg(long)]
    pub query_vectors: Option<PathBuf>,
    /// Manifest of the query vectors; defaults to query_manifest.json next to the query file.
    #[arg(long)]
    pub query_manifest: Option<PathBuf>,
    /// Externally ranked documents per query, used instead of dense retrieval.
    #[arg(long)]
    pub ranked_run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Remote backend base URL.
    #[arg(long, env = "KBRAG_BACKEND_URL")]
    pub backend_url: Option<String>,
    /// Use the in-process mock oracle with this truth table (takes precedence).
    #[arg(long)]
    pub mock_table: Option<PathBuf>,
    /// Directory of prompt templates (P_RET.txt, P_SRT.txt, P_CST.txt, P_VQA.txt).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON pipeline config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(short, long)]
    pub k: Option<usize>,
    /// "auto" or a positive integer.
    #[arg(long)]
    pub srt_mode: Option<SrtSelectionMode>,
    #[arg(long)]
    pub mct_strategy: Option<MctStrategy>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated subset of ret,srt,mct (or "none").
    #[arg(long)]
    pub stage_flags: Option<StageFlags>,
    #[arg(long)]
    pub matcher: Option<MatcherKind>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    pub data: QueryArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub traces_out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub kind: DatasetKind,
    /// Bundle directory; required for srt and mct.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[command(flatten)]
    pub data: QueryArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// SRT dataset (d_srt.jsonl) consumed by the mct builder.
    #[arg(long)]
    pub srt_dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Typed dataset output (d_ret.jsonl, d_srt.jsonl, d_mct.jsonl).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SFT export.
    #[arg(long)]
    pub sft_out: Option<PathBuf>,
    /// Fraction of records kept in the SFT export, e.g. 0.1.
    #[arg(long)]
    pub subsample: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value = "auto")]
    pub matcher: MatcherKind,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    pub data: QueryArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub ablate: AblateArgs,
    /// SRT selection sizes to sweep, e.g. auto,1,5,10,15,20.
    #[arg(long, value_delimiter = ',')]
    pub srt_k: Option<Vec<SrtSelectionMode>>,
    /// MCT strategies to sweep, e.g. merge,rerank,filter.
    #[arg(long, value_delimiter = ',')]
    pub mct_strategies: Option<Vec<MctStrategy>>,
    /// Selection sizes for the MCT grid (defaults to auto,5,10,15,20).
    #[arg(long, value_delimiter = ',')]
    pub mct_k: Option<Vec<SrtSelectionMode>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, default_value_t = 1000)]
    pub docs: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(CliError::validation)?,
            None => PipelineConfig::default(),
        };
        if let Some(g) = self.gamma {
            config.gamma = g;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(m) = self.srt_mode {
            config.srt_mode = m;
        }
        if let Some(s) = self.mct_strategy {
            config.mct_strategy = Some(s);
        }
        if let Some(t) = self.tau {
            config.tau_percent = t;
        }
        if let Some(f) = self.stage_flags {
            config.stage_flags = f;
        }
        if let Some(m) = self.matcher {
            config.matcher = m;
        }
        config.validate().map_err(CliError::validation)?;
        Ok(config)
    }
}

impl BackendArgs {
    pub fn gateway(&self) -> CliResult<Gateway> {
        let prompts = match &self.prompts {
            Some(dir) => PromptPack::load_dir(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?,
            None => PromptPack::default(),
        };
        if let Some(table) = &self.mock_table {
            let table = OracleTruthTable::load(table).map_err(CliError::validation)?;
            return Ok(Gateway::new(Arc::new(MockBackend::new(table)), prompts));
        }
        let Some(url) = &self.backend_url else {
            return Err(CliError::validation(
                "no backend: pass --mock-table or --backend-url (or set KBRAG_BACKEND_URL)",
            ));
        };
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(CliError::validation("--timeout-secs must be positive"));
        }
        let backend = HttpBackend::new(
            url,
            HttpConfig {
                timeout: Duration::from_secs_f64(self.timeout_secs),
                retries: self.retries,
                max_in_flight: self.max_in_flight,
                ..HttpConfig::default()
            },
        )?;
        Ok(Gateway::new(Arc::new(backend), prompts))
    }
}

fn sibling(queries: &Path, name: &str) -> PathBuf {
    queries.parent().unwrap_or(Path::new(".")).join(name)
}

impl QueryArgs {
    fn queries_path(&self) -> CliResult<&Path> {
        self.queries
            .as_deref()
            .ok_or_else(|| CliError::validation("--queries is required"))
    }

    fn vector_paths(&self) -> CliResult<Option<(PathBuf, PathBuf)>> {
        if self.ranked_run.is_some() && self.query_vectors.is_none() {
            return Ok(None);
        }
        let queries = self.queries_path()?;
        let manifest = self
            .query_manifest
            .clone()
            .unwrap_or_else(|| sibling(queries, "query_manifest.json"));
        let vectors = self
            .query_vectors
            .clone()
            .unwrap_or_else(|| sibling(queries, "query_vectors.bin"));
        if self.query_vectors.is_none() && !vectors.exists() {
            return Ok(None);
        }
        Ok(Some((manifest, vectors)))
    }

    pub fn load_queries(&self) -> CliResult<QuerySet> {
        let queries = self.queries_path()?;
        let vectors = self.vector_paths()?;
        Ok(QuerySet::load(
            queries,
            vectors.as_ref().map(|(m, v)| (m.as_path(), v.as_path())),
        )?)
    }

    pub fn retriever(&self, kb: Arc<KnowledgeBase>, queries: &QuerySet) -> CliResult<Retriever> {
        if let Some(run) = &self.ranked_run {
            let run = RankedRun::load(run, &kb)?;
            return Ok(Retriever::new(kb, QuerySource::Ranked(run)));
        }
        let vectors = queries.vectors().cloned().ok_or_else(|| {
            CliError::validation("no query vectors found: pass --query-vectors/--query-manifest or --ranked-run")
        })?;
        if vectors.dim() != kb.dim() {
            return Err(CliError::validation(format!(
                "query vectors have dim {} but the knowledge base has dim {}",
                vectors.dim(),
                kb.dim()
            )));
        }
        Ok(Retriever::new(kb, QuerySource::Dense(vectors)))
    }
}

fn open_kb(dir: &Path) -> CliResult<Arc<KnowledgeBase>> {
    Ok(Arc::new(KnowledgeBase::open_bundle(dir)?))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("json value serializes"));
}

fn cmd_ingest(args: &IngestArgs, json_out: bool) -> CliResult {
    let kb = KnowledgeBase::ingest(&args.docs, &args.manifest, &args.vectors)?;
    let info = kb.write_bundle(&args.out)?;
    if json_out {
        print_json(&json!({"docs": info.docs, "dim": info.dim, "digest": info.digest, "out": args.out}));
    } else {
        println!("ingested {} docs", info.docs);
        println!("digest {}", info.digest);
    }
    Ok(())
}

fn cmd_retrieve(args: &RetrieveArgs, json_out: bool) -> CliResult {
    let kb = open_kb(&args.kb)?;
    let mut results = Vec::new();
    if let Some(v) = &args.vector {
        results.push((None, kb.retrieve_topk(v, args.k)?));
    } else {
        let queries = args.data.load_queries()?;
        let retriever = args.data.retriever(kb.clone(), &queries)?;
        for q in queries.queries() {
            results.push((Some(q.query_id.clone()), retriever.retrieve(q, args.k)?));
        }
    }
    for (query_id, hits) in results {
        if json_out {
            print_json(&json!({"query_id": query_id, "hits": hits}));
        } else {
            if let Some(id) = query_id {
                println!("{id}");
            }
            for h in hits {
                let sim = h.similarity.map_or("-".to_string(), |s| format!("{s:.6}"));
                println!("  {:>3}  {}  {}", h.rank, sim, h.doc_id);
            }
        }
    }
    Ok(())
}

fn cmd_run(args: &RunArgs, json_out: bool) -> CliResult {
    let config = args.config.resolve()?;
    let gateway = args.backend.gateway()?;
    let kb = open_kb(&args.kb)?;
    let queries = args.data.load_queries()?;
    let retriever = args.data.retriever(kb, &queries)?;
    let traces = pipeline::run_batch(queries.queries(), &retriever, &config, &gateway, args.parallelism)?;
    pipeline::write_traces(&args.traces_out, &traces)?;
    let unreachable = traces.iter().any(|t| t.is_unreachable());
    let summary = if traces.is_empty() {
        None
    } else {
        Some(eval::evaluate(&traces, queries.queries(), Matcher::new(config.matcher))?)
    };
    if json_out {
        print_json(&json!({"traces": traces.len(), "out": args.traces_out, "report": summary}));
    } else {
        println!("wrote {} traces to {}", traces.len(), args.traces_out.display());
        if let Some(r) = &summary {
            println!("accuracy {:.4} over {} queries ({} failed)", r.overall, r.count, r.failed);
        }
    }
    if unreachable {
        return Err(CliError {
            code: EXIT_BACKEND,
            message: format!(
                "backend unreachable; flushed {} of {} traces",
                traces.len(),
                queries.len()
            ),
        });
    }
    Ok(())
}

fn cmd_build(args: &BuildArgs, json_out: bool) -> CliResult {
    let config = args.config.resolve()?;
    let gateway = args.backend.gateway()?;
    let matcher = Matcher::new(config.matcher);
    let queries = args.data.load_queries()?;
    let kb = match &args.kb {
        Some(dir) => open_kb(dir)?,
        None if args.kind == DatasetKind::Ret => Arc::new(
            KnowledgeBase::new(Vec::new(), VectorStore::from_rows(1, &[])?)?,
        ),
        None => return Err(CliError::validation("--kb is required for srt and mct datasets")),
    };
    let (dataset, skipped) = match args.kind {
        DatasetKind::Ret => {
            let built = forge::build_ret_dataset(queries.queries(), &gateway, &matcher);
            (Dataset::Ret(built.records), built.skipped)
        }
        DatasetKind::Srt => {
            let retriever = args.data.retriever(kb.clone(), &queries)?;
            let built = forge::build_srt_dataset(queries.queries(), &retriever, config.k, &gateway, &matcher)?;
            (Dataset::Srt(built.records), built.skipped)
        }
        DatasetKind::Mct => {
            let path = args
                .srt_dataset
                .as_ref()
                .ok_or_else(|| CliError::validation("--srt-dataset is required for mct"))?;
            let Dataset::Srt(srt) = Dataset::read(DatasetKind::Srt, path)? else {
                unreachable!()
            };
            let built = forge::build_mct_dataset(&srt, queries.queries(), &kb, config.tau_percent, &gateway, args.seed)?;
            (Dataset::Mct(built.records), built.skipped)
        }
    };
    dataset.write(&args.out)?;
    let mut exported = None;
    if let Some(sft) = &args.sft_out {
        let export = match args.subsample {
            Some(f) => dataset.subsample(f, args.seed)?,
            None => dataset.clone(),
        };
        exported = Some(forge::export_sft(&export, gateway.prompts(), queries.queries(), &kb, sft)?);
    }
    if json_out {
        print_json(&json!({
            "kind": args.kind,
            "records": dataset.len(),
            "skipped": skipped,
            "sft_records": exported,
        }));
    } else {
        println!("built {} {:?} records ({} skipped)", dataset.len(), args.kind, skipped.len());
        if let Some(n) = exported {
            println!("exported {n} SFT records");
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, json_out: bool) -> CliResult {
    let traces = pipeline::read_traces(&args.traces)?;
    let queries = QuerySet::load(&args.queries, None)?;
    let report = eval::evaluate(&traces, queries.queries(), Matcher::new(args.matcher))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(out) = &args.report_out {
        write_text(out, &text)?;
    }
    if json_out {
        print!("{text}");
    } else {
        for (split, stats) in &report.splits {
            println!("{split:>12}  {:6.2}  (n={})", stats.accuracy * 100.0, stats.count);
        }
        println!("{:>12}  {:6.2}  (n={}, failed={})", "all", report.overall * 100.0, report.count, report.failed);
    }
    Ok(())
}

fn emit_table(table: &ReportTable, out: Option<&Path>, json_out: bool) -> CliResult {
    let json_text = table.to_json_pretty();
    if let Some(path) = out {
        write_text(path, &json_text)?;
    }
    if json_out {
        print!("{json_text}");
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs, json_out: bool) -> CliResult {
    let config = args.config.resolve()?;
    let gateway = args.backend.gateway()?;
    let kb = open_kb(&args.kb)?;
    let queries = args.data.load_queries()?;
    let retriever = args.data.retriever(kb, &queries)?;
    let table = eval::run_ablation(queries.queries(), &retriever, &gateway, &config, args.parallelism)?;
    emit_table(&table, args.report_out.as_deref(), json_out)
}

fn cmd_sweep(args: &SweepArgs, json_out: bool) -> CliResult {
    let sweep = match (&args.srt_k, &args.mct_strategies) {
        (Some(ks), None) => Sweep::SrtK(ks.clone()),
        (None, Some(strategies)) => Sweep::MctGrid {
            strategies: strategies.clone(),
            ks: args.mct_k.clone().unwrap_or_else(|| {
                std::iter::once(SrtSelectionMode::Auto)
                    .chain([5, 10, 15, 20].map(SrtSelectionMode::Fixed))
                    .collect()
            }),
        },
        (None, None) => Sweep::SrtK(Sweep::default_srt_ks()),
        (Some(_), Some(_)) => {
            return Err(CliError::validation("pass either --srt-k or --mct-strategies, not both"))
        }
    };
    let a = &args.ablate;
    let config = a.config.resolve()?;
    let gateway = a.backend.gateway()?;
    let kb = open_kb(&a.kb)?;
    let queries = a.data.load_queries()?;
    let retriever = a.data.retriever(kb, &queries)?;
    let table = eval::run_sweep(queries.queries(), &retriever, &gateway, &config, &sweep, a.parallelism)?;
    emit_table(&table, a.report_out.as_deref(), json_out)
}

fn cmd_serve(args: &ServeArgs, json_out: bool) -> CliResult {
    let table = OracleTruthTable::load(&args.table).map_err(CliError::validation)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::validation(format!("bad address: {e}")))?;
    let handle = server::spawn(Arc::new(MockBackend::new(table)), addr)
        .map_err(|e| CliError::io(format!("binding {addr}: {e}")))?;
    if json_out {
        print_json(&json!({"listening": handle.url()}));
    } else {
        println!("listening on {}", handle.url());
    }
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    handle.wait().map_err(|e| CliError::io(e.to_string()))
}

fn cmd_synth(args: &SynthArgs, json_out: bool) -> CliResult {
    if args.docs < 5 || args.queries == 0 || args.dim == 0 {
        return Err(CliError::validation("synth needs at least 5 docs, 1 query and dim >= 1"));
    }
    let spec = ScenarioSpec {
        queries: args.queries,
        docs: args.docs,
        dim: args.dim,
        seed: args.seed,
        ..ScenarioSpec::default()
    };
    let scenario = synth::ablation_scenario(&spec);
    scenario.write(&args.out)?;
    if json_out {
        print_json(&json!({"out": args.out, "queries": args.queries, "docs": args.docs}));
    } else {
        println!("wrote scenario with {} queries and {} docs to {}", args.queries, args.docs, args.out.display());
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, cli.json),
        Command::Retrieve(a) => cmd_retrieve(a, cli.json),
        Command::Run(a) => cmd_run(a, cli.json),
        Command::Build(a) => cmd_build(a, cli.json),
        Command::Eval(a) => cmd_eval(a, cli.json),
        Command::Ablate(a) => cmd_ablate(a, cli.json),
        Command::Sweep(a) => cmd_sweep(a, cli.json),
        Command::ServeMock(a) => cmd_serve(a, cli.json),
        Command::Synth(a) => cmd_synth(a, cli.json),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
