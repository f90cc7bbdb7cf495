//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Errors carry
//! enough context to be actionable (shape mismatches always include both
//! shapes) and map onto coarse categories used by the CLI for exit codes.

use thiserror::Error;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid configuration, task definition, or argument.
    Config,
    /// Filesystem or serialization failure.
    Io,
    /// Numeric contract violation (shapes, degenerate inputs, non-finite data).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{op}: data length {got} does not match {rows}x{cols}")]
    DataLength {
        op: &'static str,
        rows: usize,
        cols: usize,
        got: usize,
    },

    #[error("{0}: input must be non-empty")]
    EmptyInput(&'static str),

    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),

    #[error("cannot normalize a near-zero vector (norm {norm:.3e})")]
    DegenerateVector { norm: f64 },

    #[error("layer index {layer} out of range 1..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("hook `{hook}` changed hidden shape from {expected_rows}x{expected_cols} to {got_rows}x{got_cols}")]
    HookShape {
        hook: String,
        expected_rows: usize,
        expected_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("token id {token} out of vocabulary (size {vocab_size})")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("sequence length {len} exceeds maximum {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scene placement failed: could not fit {requested} objects on a {width}x{height} grid")]
    ScenePlacement {
        requested: usize,
        width: usize,
        height: usize,
    },

    #[error("token provenance mismatch: expected {expected}, got {got}")]
    Provenance { expected: String, got: String },

    #[error("prune count {n_keep} out of range 1..={n_tokens}")]
    PruneCount { n_keep: usize, n_tokens: usize },

    #[error("probe cache holds {cache_layers} layers but configuration expects {config_layers}")]
    CacheLayerMismatch {
        cache_layers: usize,
        config_layers: usize,
    },

    #[error("fingerprint mismatch: file records {recorded}, content hashes to {computed}")]
    FingerprintMismatch { recorded: String, computed: String },

    #[error("malformed {kind} file: {detail}")]
    FileFormat { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_)
            | Error::LayerOutOfRange { .. }
            | Error::CacheLayerMismatch { .. }
            | Error::FingerprintMismatch { .. }
            | Error::FileFormat { .. } => ErrorCategory::Config,
            Error::Io(_) | Error::Json(_) => ErrorCategory::Io,
            _ => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
