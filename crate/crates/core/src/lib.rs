//! Knowledge-based multi-modal retrieval-augmented generation engine.
//!
//! The engine answers image-question pairs against a passage-level knowledge
//! base and filters what it retrieves with three reflection tokens produced by
//! the answering model itself:
//!
//! * **RET** decides whether retrieval is needed at all,
//! * **SRT** scores and reranks each retrieved passage,
//! * **MCT** checks the selected passages for mutual consistency.
//!
//! Model calls go through [`gateway::Gateway`], either to a remote backend over
//! JSON/HTTP or to the deterministic [`gateway::MockBackend`]. The
//! [`forge`] module builds the token training sets from the model's own
//! answers and [`eval`] runs ablations and sweeps.

pub mod cli;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod kb;
pub mod pipeline;
pub mod prompts;
pub mod synth;
pub mod tokens;

pub use eval::{EvalReport, Matcher, MatcherKind};
pub use gateway::{Gateway, GatewayError, OracleTruthTable};
pub use kb::{Document, KnowledgeBase, QueryRecord, QuerySet, RankedRun, RetrievalHit, Retriever};
pub use pipeline::{PipelineConfig, QueryTrace, StageFlags};
pub use tokens::{ContextSet, MctStrategy, PairScore, RetDecision, RetLabel, SrtSelectionMode};
