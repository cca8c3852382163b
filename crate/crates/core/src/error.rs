use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op} at tape node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),

    #[error("model is not deterministic: two evaluations at the same point differ ({0} vs {1})")]
    NonDeterministic(f64, f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("genotype parse error at byte {position}: {message}")]
    GenotypeParse { position: usize, message: String },

    #[error("genotype violates the cell structure: {0}")]
    InvalidGenotype(String),

    #[error("enumeration would produce {count} genotypes, above the cap of {cap}")]
    CapExceeded { count: u128, cap: usize },

    #[error("supernet operation rejected: {0}")]
    Supernet(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown genotype {0}")]
    UnknownGenotype(String),

    #[error("format error in {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("config hash mismatch: file has {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
