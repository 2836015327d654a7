use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (CoNLL rows, tag strings, corpus mismatches).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A tag string that is not `O` or `B-X`/`I-X`.
    #[error("invalid tag `{tag}`: {msg}")]
    InvalidTag { tag: String, msg: String },

    /// A label sequence that violates the IOB2 scheme.
    #[error("invalid IOB2 sequence: {0}")]
    InvalidIob(String),

    /// Span outside the sentence, overlapping spans, width over the limit.
    #[error("invalid span: {0}")]
    InvalidSpan(String),

    /// Two corpora that were expected to align do not.
    #[error("corpus mismatch: {0}")]
    CorpusMismatch(String),

    /// Operand shapes incompatible with the requested tensor op.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Gather/slice index past the end of the operand.
    #[error("index out of range in {op}: {index} >= {bound}")]
    InvalidIndex {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    /// Softmax over a row with no unmasked position.
    #[error("masked softmax: all positions masked in row {0}")]
    AllMasked(usize),

    /// `backward` called on a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// `backward` called twice on the same loss without a reset.
    #[error("backward already ran on this loss")]
    BackwardTwice,

    /// Brute-force oracle asked for an instance above its size guard.
    #[error("oracle instance too large: {0}")]
    OracleTooLarge(String),

    /// Viterbi found no legal path under the active constraints.
    #[error("no legal path under transition constraints")]
    NoLegalPath,

    /// Model container problems: bad version, checksum, truncation.
    #[error("model container: {0}")]
    Container(String),

    /// Invalid configuration value.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
