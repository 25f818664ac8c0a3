use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transmission is not allowed in channel state {state}")]
    ForbiddenAction { state: usize },

    #[error("channel state {state} is out of range (num_states = {num_states})")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("invalid channel: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidChannel(Vec<crate::channel::Violation>),

    #[error("degenerate interval [{lo}, {hi}]: probability mass {mass:e} underflows")]
    DegenerateInterval { lo: f64, hi: f64, mass: f64 },

    #[error("grid point {e} is too close to the grid boundary ({half_width})")]
    OutOfGrid { e: f64, half_width: f64 },

    #[error("value {value:e} at stage {stage}, state {state} exceeds the cap {cap:e}; widen or refine the grid")]
    ValueOverflow {
        stage: usize,
        state: usize,
        value: f64,
        cap: f64,
    },

    #[error("asymmetric policy cannot be simulated with a = {a} (no tractable estimator)")]
    AsymmetricPolicy { a: f64 },

    #[error("enumeration of {size} policies exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("policy covers {policy} channel states but the channel has {channel}")]
    PolicyMismatch { policy: usize, channel: usize },

    #[error("malformed policy file: {0}")]
    PolicyFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
