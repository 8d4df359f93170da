use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("no such session {0:?}")]
    UnknownSession(String),
    #[error("session is full")]
    SessionFull,
    #[error("token {0:?} is already seated")]
    DuplicateToken(String),
    #[error("session already in progress")]
    SessionInProgress,
    #[error("token {0:?} holds no seat in this session")]
    UnknownToken(String),
    #[error("action not allowed in phase {0}")]
    WrongPhase(String),
    #[error("invalid strategy {0} (expected 1..=5)")]
    InvalidStrategy(i64),
    #[error("seat already submitted a choice this round")]
    DoubleSubmission,
    #[error("b={0} is outside the treatment set")]
    TreatmentNotAllowed(f64),
    #[error("seat plan has {got} seats, session needs {want}")]
    SeatPlan { got: usize, want: usize },
    #[error("session not finished; request a partial export")]
    NotFinished,
    #[error("session closed")]
    Closed,
    #[error(transparent)]
    Core(#[from] equisel_core::Error),
}

pub type Result<T, E = ServerError> = std::result::Result<T, E>;
