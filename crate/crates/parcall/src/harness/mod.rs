//! Run orchestration: dataset ingestion, configuration, evaluation
//! drivers, report emission, and synthetic-data generation.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod report;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: malformed JSON")]
    ParseError { line: usize },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("entry {id}: {source}")]
    Entry {
        id: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("report is not self-consistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Scheduler(#[from] crate::scheduler::SchedulerError),
    #[error(transparent)]
    Speculative(#[from] crate::speculative::SpeculativeError),
    #[error(transparent)]
    Decompose(#[from] crate::decompose::DecomposeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn for_entry(id: &str, source: HarnessError) -> HarnessError {
        HarnessError::Entry {
            id: id.to_string(),
            source: Box::new(source),
        }
    }
}
