use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by [`ErrorKind`] so the command line can map them
/// onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // linear algebra
    #[error("matrix is singular (pivot magnitude {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("requested {k} components but data has only {dims} dimensions and {samples} samples")]
    KTooLarge { k: usize, dims: usize, samples: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),

    // model / optimisation
    #[error("non-positive logistic scale {0}")]
    NonPositiveScale(f64),
    #[error("unmixing matrix W is singular")]
    SingularUnmixing,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(&'static str),
    #[error("non-finite update in parameter {0}")]
    NonFiniteUpdate(&'static str),

    // preprocessing
    #[error("polynomial degree {degree} too high for series of length {len}")]
    DegreeTooHigh { degree: usize, len: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("window {window} longer than sequence of length {len}")]
    WindowTooLong { window: usize, len: usize },

    // simulation
    #[error("invalid stochastic matrix: {0}")]
    InvalidStochasticMatrix(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid HRF parameters: {0}")]
    InvalidHrfParams(String),

    // analysis
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    // files
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("dimension overflow in array {0}")]
    DimOverflow(String),
    #[error("duplicate array name {0}")]
    DuplicateName(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("missing array {0}")]
    MissingArray(String),
    #[error("checkpoint does not match config: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // config
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    TypeError { key: String, message: String },
    #[error("missing required config key `{0}`")]
    MissingRequired(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            UnknownKey(_) | TypeError { .. } | MissingRequired(_) | InvalidConfig(_)
            | ConfigMismatch(_) | KTooLarge { .. } | DegreeTooHigh { .. }
            | WindowTooLong { .. } | InvalidStochasticMatrix(_) | InvalidHrfParams(_) => {
                ErrorKind::Usage
            }
            BadMagic(_) | TruncatedFile(_) | DimOverflow(_) | DuplicateName(_)
            | MissingArray(_) | Malformed(_) | Io { .. } | ShapeMismatch(_) | LengthMismatch(_)
            | TooFewSamples(_) | EmptyGraph => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }

    /// Variant name, stable across releases, for diagnostics.
    pub fn name(&self) -> &'static str {
        use Error::*;
        match self {
            SingularMatrix { .. } => "SingularMatrix",
            NotSymmetric(_) => "NotSymmetric",
            NoConvergence(_) => "NoConvergence",
            KTooLarge { .. } => "KTooLarge",
            ShapeMismatch(_) => "ShapeMismatch",
            NonFinite(_) => "NonFinite",
            NonPositiveScale(_) => "NonPositiveScale",
            SingularUnmixing => "SingularUnmixing",
            NonFiniteGradient(_) => "NonFiniteGradient",
            NonFiniteUpdate(_) => "NonFiniteUpdate",
            DegreeTooHigh { .. } => "DegreeTooHigh",
            ZeroVariance(_) => "ZeroVariance",
            WindowTooLong { .. } => "WindowTooLong",
            InvalidStochasticMatrix(_) => "InvalidStochasticMatrix",
            NotPositiveDefinite(_) => "NotPositiveDefinite",
            InvalidHrfParams(_) => "InvalidHrfParams",
            EmptyGraph => "EmptyGraph",
            RankDeficient => "RankDeficient",
            TooFewSamples(_) => "TooFewSamples",
            LengthMismatch(_) => "LengthMismatch",
            BadMagic(_) => "BadMagic",
            TruncatedFile(_) => "TruncatedFile",
            DimOverflow(_) => "DimOverflow",
            DuplicateName(_) => "DuplicateName",
            Malformed(_) => "Malformed",
            MissingArray(_) => "MissingArray",
            ConfigMismatch(_) => "ConfigMismatch",
            Io { .. } => "Io",
            UnknownKey(_) => "UnknownKey",
            TypeError { .. } => "TypeError",
            MissingRequired(_) => "MissingRequired",
            InvalidConfig(_) => "InvalidConfig",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
