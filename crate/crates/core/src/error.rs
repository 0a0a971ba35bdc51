use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the design pipeline can report.
///
/// Variants map one-to-one onto CLI exit codes, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("validation error at {path}: {msg}")]
    Validation { path: String, msg: String },
    #[error("edge {from}->{to} has non-positive weight {w}")]
    InvalidWeight { from: usize, to: usize, w: f64 },
    #[error("graph is not strongly connected (vertex {vertex} unreachable {direction})")]
    NotStronglyConnected { vertex: usize, direction: &'static str },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigendecomposition did not converge")]
    EigFailure,
    #[error("kernel of S(lambda) at lambda={lambda} has dimension {found}, expected {expected}")]
    KernelDimensionUnexpected {
        lambda: Complex64,
        found: usize,
        expected: usize,
    },
    #[error("eigenvalues are not distinct and real")]
    NotDistinctReal,
    #[error("eigenvalues are not distinct")]
    NotDistinct,
    #[error("repeated eigenvalues (defective designs unsupported): {values:?}")]
    RepeatedEigenvalues { values: Vec<Complex64> },
    #[error("pair (-L, B) is not controllable")]
    Uncontrollable,
    #[error("no nonzero h with N4 h = 0 at lambda={lambda}")]
    KernelInfeasible { lambda: Complex64 },
    #[error(
        "blocking vector at lambda={lambda} is dependent on its conjugate; \
         more actuation nodes are needed (q = m + 2)"
    )]
    ConjugateDegenerate { lambda: Complex64 },
    #[error("{requested} modes requested but at most n - m = {max} can be blocked")]
    TooManyModes { requested: usize, max: usize },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("mode at {mode} is already observable")]
    AlreadyObservable { mode: Complex64 },
    #[error("N4 vanishes at lambda={lambda}; no actuation pattern exposes this mode")]
    EnableInfeasible { lambda: Complex64 },
    #[error("could not complete an independent modal set: {0}")]
    CompletionFailed(String),
    #[error("modal matrix is singular")]
    SingularModalMatrix,
    #[error("post-check failed: {0}")]
    ResidualTooLarge(String),
    #[error("partition is not a cut: edge {from}->{to} joins v1 and v2")]
    NotACut { from: usize, to: usize },
    #[error("induced subgraph requested on an empty vertex set")]
    EmptyKeep,
    #[error("no eigenvalue clears the grounded-block gap test")]
    NoAdmissibleMode,
    #[error("accessible region is not strongly connected")]
    AccessibleNotStronglyConnected,
    #[error("no stable design after {iters} shift doublings (d = {d}); closed-loop spectrum: {spectrum:?}")]
    EscalationExhausted {
        iters: usize,
        d: f64,
        spectrum: Vec<Complex64>,
    },
    #[error("mode index {index} out of range (n = {n})")]
    ModeOutOfRange { index: usize, n: usize },
}

impl Error {
    pub(crate) fn stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the CLI. 0 and 1 are reserved for
    /// "verified" and "verification failed".
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. } => 3,
            Error::Validation { .. } => 4,
            Error::InvalidWeight { .. } => 5,
            Error::NotStronglyConnected { .. } => 6,
            Error::DimensionMismatch(_) => 7,
            Error::EigFailure => 8,
            Error::KernelDimensionUnexpected { .. } => 9,
            Error::NotDistinctReal => 10,
            Error::NotDistinct => 11,
            Error::RepeatedEigenvalues { .. } => 12,
            Error::Uncontrollable => 13,
            Error::KernelInfeasible { .. } => 14,
            Error::ConjugateDegenerate { .. } => 15,
            Error::TooManyModes { .. } => 16,
            Error::Stage { source, .. } => source.exit_code(),
            Error::AlreadyObservable { .. } => 17,
            Error::EnableInfeasible { .. } => 18,
            Error::CompletionFailed(_) => 19,
            Error::SingularModalMatrix => 20,
            Error::ResidualTooLarge(_) => 21,
            Error::NotACut { .. } => 22,
            Error::EmptyKeep => 23,
            Error::NoAdmissibleMode => 24,
            Error::AccessibleNotStronglyConnected => 25,
            Error::EscalationExhausted { .. } => 26,
            Error::ModeOutOfRange { .. } => 27,
        }
    }
}
