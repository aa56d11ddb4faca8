//! Error types shared across the crate.

use thiserror::Error;

/// A single configuration violation, carrying the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LpnError {
    #[error("invalid configuration: {}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("{op}: dimension mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error("rho must be in (0, 1], got {0}")]
    RhoOutOfRange(f64),

    #[error("batch fraction must be in (0, 1], got {0}")]
    FractionOutOfRange(f64),

    #[error("log-det undefined: A^T A is numerically singular")]
    LogDetUndefined,

    #[error("ridge required: gram matrix is rank deficient and no ridge weight was given")]
    RidgeRequired,

    #[error("gram symmetrization produced non-finite eigenvalues")]
    GramNotFinite,

    #[error("goal solver did not reach feasibility: final overlap {final_overlap:e}")]
    GoalNonConvergence {
        final_overlap: f64,
        /// Best representations found; callers that tolerate infeasibility may keep training with these.
        best: Box<ndarray::Array2<f64>>,
    },

    #[error("at least two classes are required, got {0}")]
    SingleClass(usize),

    #[error("class {class} has {have} samples, need {need}")]
    ClassDeficit {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("zero-variance sample columns: {0:?}")]
    ZeroVarianceColumns(Vec<usize>),

    #[error("bad magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    #[error("unexpected EOF in {0}")]
    UnexpectedEof(String),

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, LpnError>;
