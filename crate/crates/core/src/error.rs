use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    #[error("invalid step label {0:?}")]
    InvalidLabel(String),

    #[error("unknown grammar kind {0:?}")]
    UnknownGrammar(String),

    #[error("{0} is not supported for grammar {1}")]
    UnsupportedGrammar(&'static str, &'static str),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("sequence is empty")]
    EmptySequence,

    #[error("malformed sequence {0:?}: expected a B prefix and an E suffix")]
    MalformedSequence(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, sequence {sequence}")]
    Diverged { epoch: usize, sequence: usize },

    #[error("parameter vector has length {actual}, layout expects {expected}")]
    ParamShape { expected: usize, actual: usize },

    #[error("k = {k} is invalid for {distinct} distinct patterns (need 2 <= k <= distinct)")]
    InvalidK { k: usize, distinct: usize },

    #[error("silhouette needs at least two clusters")]
    SingleCluster,

    #[error("pattern and assignment lengths differ ({patterns} vs {assignment})")]
    LengthMismatch { patterns: usize, assignment: usize },

    #[error("DFA is incomplete: state {state} has no transition on symbol {symbol}")]
    IncompleteDfa { state: usize, symbol: usize },

    #[error("invalid DFA: {0}")]
    InvalidDfa(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad {what} file: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
