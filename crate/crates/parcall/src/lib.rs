//! Parallel multi-head decoding runtime for structured function calls.
//!
//! Instead of emitting a function call as one sequential JSON string, the
//! runtime splits it across up to eight decoding streams (content,
//! function name, six positional arguments) selected by reserved
//! vocabulary tokens. All streams share one prompt prefill, advance in
//! lockstep batches, and terminate independently, so end-to-end decode
//! time is set by the longest stream rather than the token total.
//!
//! The crate bundles:
//! - [`tokens`]: the 17 reserved tokens and a byte-level reference
//!   tokenizer;
//! - [`codec`]: conversion between JSON-style calls and per-head streams,
//!   schema normalization, and the uncompressed baseline rendering;
//! - [`backend`]: deterministic toy backends (n-gram, scripted replay)
//!   with prefill/fork/step semantics and a roofline cost model;
//! - [`scheduler`]: lockstep parallel generation and the sequential
//!   baseline;
//! - [`speculative`]: draft-and-verify speculation over any two backends;
//! - [`metrics`]: latency, compression, batch-efficiency, and percentile
//!   formulas;
//! - [`decompose`]: parallel-invocation decomposition and accuracy
//!   scoring;
//! - [`harness`]: dataset ingestion, run orchestration, and reports.

pub mod backend;
pub mod codec;
pub mod decompose;
pub mod harness;
pub mod metrics;
pub mod parallel;
pub mod scheduler;
pub mod speculative;
pub mod tokens;

pub use backend::{Backend, CostModel};
pub use codec::{FunctionCall, HeadStreamSet, ToolSchema};
pub use decompose::{EvalEntry, NamedCall, RawSample};
pub use harness::config::RunConfig;
pub use harness::report::EvalReport;
pub use scheduler::{DecodeTrace, StopConfig};
pub use speculative::{SpecConfig, SpecTrace};
pub use tokens::{ByteTokenizer, Head, SpecialToken, TokenId};
