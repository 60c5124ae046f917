//! Error type shared across the crate.
//!
//! Two broad classes matter to callers (and to the CLI exit code): input
//! errors (bad arguments, malformed files) and numerical errors (failed
//! factorizations, divergent iterations, degenerate geometry). A couple of
//! numerical failures carry structured payloads because callers need them:
//! greedy selection reports how many centroids were actually selectable, and
//! CG failures attach the residual trace up to the failure.

use thiserror::Error;

use crate::numerics::CgTrace;

#[derive(Debug, Error)]
pub enum ParkError {
    /// Invalid arguments, shapes, or configuration.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed data file. `line` is 1-based when known.
    #[error("parse error{}: {message}", match line { Some(l) => format!(" at line {l}"), None => String::new() })]
    Parse { line: Option<u64>, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Factorization/iteration failure that jitter or retries could not fix.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Greedy selection ran out of linearly independent candidates.
    #[error("degenerate rank: only {selectable} of {requested} centroids selectable before the residual dropped below threshold")]
    DegenerateRank { selectable: usize, requested: usize },

    /// Conjugate gradients produced non-finite values; trace covers the
    /// iterations completed before the failure.
    #[error("conjugate gradient produced non-finite values after {} iterations", trace.iterations())]
    NonFiniteCg { trace: CgTrace },
}

impl ParkError {
    /// CLI exit code: 2 for input-class errors, 3 for numerical-class ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            ParkError::Input(_) | ParkError::Parse { .. } | ParkError::Io(_) => 2,
            ParkError::Numerical(_)
            | ParkError::DegenerateRank { .. }
            | ParkError::NonFiniteCg { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, ParkError>;
