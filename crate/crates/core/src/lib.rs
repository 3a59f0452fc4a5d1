//! Rank-aware contrastive training for ordinal regression at desk scale.
//!
//! The crate wires a small reverse-mode autodiff core ([`graph`]) into a
//! coarse-to-fine ordinal regression pipeline: continuous labels are
//! discretized into named concept bins ([`binning`]), a toy dual encoder
//! produces temperature-scaled similarity logits ([`embeddings`]), the
//! contrastive objective reweights negatives by label distance ([`losses`]),
//! and a learnable-shift head refines class probabilities into a continuous
//! prediction ([`head`]). [`diagnostics`] verifies the InfoNCE
//! mutual-information bounds numerically on small discrete joints, and
//! [`cli`] exposes the whole thing as runnable experiments.

pub mod binning;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod embeddings;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod losses;
pub mod matrix;
pub mod train;

pub use binning::{BinSpec, DistanceKind};
pub use embeddings::{EncoderParams, ModelParams, PromptTable, Temperature};
pub use graph::{Graph, NodeId, OpKind};
pub use matrix::Matrix;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("row {row} has L2 norm below 1e-30, cannot normalize")]
    ZeroRow { row: usize },
    #[error("backward root must be scalar-shaped (1x1), got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("builder is not deterministic: two forward passes disagree")]
    NonDeterministicBuilder,
    #[error("label {label} outside bin range [{lo}, {hi}]")]
    OutOfRange { label: f64, lo: f64, hi: f64 },
    #[error("bad arity: {0}")]
    BadArity(String),
    #[error("batch too small: need at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("all labels in the batch are equal and the degenerate fallback is disabled")]
    DegenerateLabels,
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("invalid probability table: {0}")]
    InvalidPmf(String),
    #[error("alphabet too large for exhaustive checks: |Z|*|W| = {0} > 64")]
    AlphabetTooLarge(usize),
    #[error("degenerate marginal: symbol {symbol} of {side} has zero probability")]
    DegenerateMarginal { side: &'static str, symbol: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
