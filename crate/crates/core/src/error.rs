use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FuseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown verifier \"{verifier}\"")]
    UnknownVerifier { line: usize, verifier: String },

    #[error("duplicate record for query \"{query_id}\", response \"{response_id}\"")]
    Duplicate { query_id: String, response_id: String },

    #[error("blocks with fewer than 2 responses: {}", .query_ids.join(", "))]
    TooFewResponses { query_ids: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least 2 samples, got {got}")]
    InsufficientSamples { got: usize },

    #[error("need at least {required} active verifiers, have {active} (deactivated: {deactivated:?})")]
    InsufficientVerifiers {
        active: usize,
        required: usize,
        deactivated: Vec<usize>,
    },

    #[error("rank-one fit did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("covariance has no off-diagonal signal")]
    DegenerateSpectrum,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("every pseudo-label margin is zero")]
    DegeneratePseudoLabels,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("majority of verifiers not better than random ({better} of {active} above 1/2)")]
    AssumptionViolated { better: usize, active: usize },

    #[error("method {method} unavailable: {reason}")]
    Unavailable { method: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("method {method} has no results for queries: {}", .missing.join(", "))]
    PartialResults { method: String, missing: Vec<String> },

    #[error("groups overlap or reference unknown columns: {0}")]
    Partition(String),

    #[error("oracle posterior requires a dependence-free generative model")]
    UnsupportedOracle,

    #[error("unknown query id \"{0}\"")]
    UnknownQuery(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl FuseError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuseError::Io {
            path: path.into(),
            source,
        }
    }
}
