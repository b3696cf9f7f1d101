use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("serving gain of user ({cell}, {user}) is not positive")]
    ZeroServingGain { cell: usize, user: usize },

    #[error("pilot {pilot} is used twice in one cell of reuse group {group}")]
    PilotCollision { group: usize, pilot: usize },

    #[error("pilot index {index} is not in a book of length {tau}")]
    UnknownPilot { index: usize, tau: usize },

    #[error("missing channel estimate for link ({bs}, {cell}, {user})")]
    MissingEstimate { bs: usize, cell: usize, user: usize },

    #[error("instance with {users} users exceeds the exhaustive-search limit of {limit}")]
    InstanceTooLarge { users: usize, limit: usize },

    #[error("unknown figure {id}; valid figures are {valid}")]
    UnknownFigure { id: u32, valid: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SimError::InvalidParameter(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            SimError::InvalidParameter(_)
                | SimError::Config(_)
                | SimError::UnknownFigure { .. }
                | SimError::InvalidExperiment(_)
                | SimError::InstanceTooLarge { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
