//! Crate-wide error type and result alias.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the library.
#[derive(Debug)]
pub enum Error {
    /// An operation received an empty input where at least one element is required.
    EmptyInput(&'static str),
    /// A value that must be finite was NaN or infinite.
    NonFinite { label: &'static str },
    /// Vector or matrix length does not match the expected dimension.
    Dimension {
        label: &'static str,
        expected: usize,
        got: usize,
    },
    /// A square matrix was required.
    NotSquare { rows: usize, cols: usize },
    /// Gaussian elimination hit a pivot below the singularity threshold.
    SingularMatrix { pivot: f64 },
    /// The Neumann series convergence guard rejected the matrix.
    NeumannGuard { norm: f64 },
    /// The Gram matrix of the subspace basis is singular even after ridging.
    DegenerateBasis,
    /// An input vector was degenerate (for example a zero-norm feature).
    DegenerateInput(&'static str),
    /// A vector failed the probability-simplex invariant.
    Simplex(&'static str),
    /// A class label was outside `[0, classes)`.
    LabelOutOfRange { label: i64, classes: usize },
    /// Neighbor count outside `[1, n]`.
    KOutOfRange { k: usize, n: usize },
    /// A rate parameter was outside its valid interval.
    RateOutOfRange { label: &'static str, value: f64 },
    /// A histogram range with `lo >= hi`.
    BadRange { lo: f64, hi: f64 },
    /// A gradient group contained a non-finite entry.
    NumericalInstability { group: String },
    /// Training loss became non-finite at the given epoch.
    Diverged { epoch: usize },
    /// A synthetic-data configuration that cannot be satisfied.
    InfeasibleConfig(&'static str),
    /// Invalid run configuration (bad key, bad value, missing section).
    Config(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A serialized artifact had the wrong magic bytes or malformed structure.
    Format(String),
    /// A serialized artifact ended before its declared payload.
    Truncated { expected: usize, got: usize },
    /// A serialized artifact carries an unsupported format version.
    Version { got: u16, supported: u16 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::NonFinite { label } => write!(f, "non-finite value in {label}"),
            Error::Dimension {
                label,
                expected,
                got,
            } => write!(f, "dimension mismatch in {label}: expected {expected}, got {got}"),
            Error::NotSquare { rows, cols } => {
                write!(f, "matrix must be square, got {rows}x{cols}")
            }
            Error::SingularMatrix { pivot } => {
                write!(f, "singular matrix: pivot {pivot:e} below threshold")
            }
            Error::NeumannGuard { norm } => write!(
                f,
                "Neumann guard violated: ||I - B||_1 = {norm} >= 1; use the exact inverse"
            ),
            Error::DegenerateBasis => write!(f, "subspace basis is degenerate: W^T W singular"),
            Error::DegenerateInput(what) => write!(f, "degenerate input: {what}"),
            Error::Simplex(what) => write!(f, "probability simplex violation: {what}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside [0, {classes})")
            }
            Error::KOutOfRange { k, n } => write!(f, "k = {k} outside [1, {n}]"),
            Error::RateOutOfRange { label, value } => {
                write!(f, "{label} = {value} outside its valid range")
            }
            Error::BadRange { lo, hi } => write!(f, "invalid range: lo {lo} >= hi {hi}"),
            Error::NumericalInstability { group } => {
                write!(f, "non-finite gradient in parameter group {group}")
            }
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::InfeasibleConfig(what) => write!(f, "infeasible configuration: {what}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Truncated { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
            Error::Version { got, supported } => {
                write!(f, "unsupported format version {got} (supported: {supported})")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
