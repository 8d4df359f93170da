use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is not on the simplex: {0}")]
    NotOnSimplex(String),
    #[error("invalid strategy index {0} (expected 1..=5)")]
    InvalidStrategy(i64),
    #[error("malformed permutation code {0:?}")]
    InvalidPermutation(String),
    #[error("round needs at least 2 players, got {0}")]
    TooFewPlayers(u32),
    #[error("finite-difference step {0} outside [1e-8, 1e-3]")]
    InvalidStep(f64),
    #[error("eigendecomposition did not converge")]
    EigenFailure,
    #[error("integration blew up at step {step} (|x| > 10)")]
    BlowUp { step: usize },
    #[error("pair (J, B) is not controllable: rank {0} < 5")]
    Uncontrollable(usize),
    #[error("target spectrum is not closed under conjugation")]
    ConjugationViolation,
    #[error("empty averaging window")]
    EmptyWindow,
    #[error("series has {0} points, at least 2 required")]
    SeriesTooShort(usize),
    #[error("logs mix treatments b={0} and b={1}")]
    MixedTreatments(f64, f64),
    #[error("zero vector")]
    ZeroVector,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
