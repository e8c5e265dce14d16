use std::path::PathBuf;

use crate::corpus::TokenKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown element type {0:?}")]
    UnknownType(String),
    #[error("layout has no elements")]
    EmptyLayout,
    #[error("layout has {n} elements, more than the maximum of {max}")]
    TooManyElements { n: usize, max: usize },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("illegal sequence at slot {slot}: expected {expected:?}, got {got:?}")]
    IllegalSequence {
        slot: usize,
        expected: TokenKind,
        got: TokenKind,
    },
    #[error("MASK survived in type slot {slot}")]
    MaskedType { slot: usize },
    #[error("timestep {t} outside [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },
    #[error("x_t={xt} cannot be reached from x_0={x0} at t={t}")]
    InfeasiblePair { xt: usize, x0: usize, t: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed corpus: {0}")]
    MalformedCorpus(String),
    #[error("corpus is empty after filtering")]
    EmptyCorpus,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
