//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Errors surfaced by dataset loading, training, checkpointing, and the
/// numerical routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path that was touched.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset line did not split into exactly three tab-separated fields.
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedTriple {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    /// A triple mentions an entity or relation missing from the vocabulary.
    #[error("unknown {kind} label '{label}'")]
    UnknownLabel { kind: &'static str, label: String },

    /// The Jacobi sweep cap was reached before the off-diagonal mass vanished.
    #[error("svd did not converge within {sweeps} sweeps (worst off-diagonal ratio {residual:.3e})")]
    SvdConvergence { sweeps: usize, residual: f64 },

    /// Training produced a non-finite loss; reported with its position.
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    /// Checkpoint bytes do not describe a model this build can read.
    #[error("invalid checkpoint: {reason}")]
    Checkpoint { reason: String },

    /// A ranking query hit a filter index that does not contain its target.
    #[error("filter index is missing the query target (subject {subject}, relation {relation}, object {object})")]
    FilterInconsistent {
        subject: usize,
        relation: usize,
        object: usize,
    },

    /// A configuration value failed validation.
    #[error("invalid configuration: {reason}")]
    Config { reason: String },

    /// Model dimensions disagree with the data they are applied to.
    #[error("dimension mismatch: {reason}")]
    Dimension { reason: String },
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
