use thiserror::Error;

/// Errors raised by the simulation, control and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("coincident nodes at segment {segment}: orientation undefined")]
    CoincidentNodes { segment: usize },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("simulation of leg {leg} failed at t = {time:.6} s: {source}")]
    Leg {
        leg: String,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tick {tick}: {source}")]
    Tick {
        tick: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable category used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::CoincidentNodes { .. } => "coincident_nodes",
            Error::NonFinite { .. } => "non_finite",
            Error::Leg { .. } => "leg_simulation",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Tick { .. } => "tick",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}
