//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by layout construction, forward passes, and the simulator.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    /// Both token counts were zero; a sequence needs at least one token.
    #[error("empty sequence: num_visual + num_text must be >= 1")]
    EmptySequence,

    /// Two operands disagree on dimensions.
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// Merge prefix size exceeds the sequence length.
    #[error("prefix size {prefix} exceeds sequence length {len}")]
    PrefixTooLarge { prefix: usize, len: usize },

    /// Block sizes must be at least one row/column.
    #[error("block sizes must be >= 1, got {rows}x{cols}")]
    EmptyBlockSpec { rows: usize, cols: usize },

    /// Decode was requested against a cache that holds no tokens.
    #[error("decode step requires a non-empty KV cache")]
    EmptyCache,

    /// The two distributions share no support, so no gap can be computed.
    #[error("distribution supports do not intersect on row {row}")]
    EmptySupport { row: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
