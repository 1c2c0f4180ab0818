//! Error types shared across the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A run configuration is inconsistent (bad key, band overlap, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input with no usable signal content (e.g. zero-power field).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// No pilot line found in the expected band.
    #[error("pilot not found: {0}")]
    PilotNotFound(String),

    /// Pilot present but unusable for synchronization.
    #[error("synchronization failure: {0}")]
    SyncFailure(String),

    /// Preamble correlation too weak to fix symbol timing.
    #[error("frame synchronization failure: {0}")]
    FrameSync(String),

    /// Shot-noise calibration did not resolve the vacuum level.
    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    /// Transmitted/received data uncorrelated; channel estimate impossible.
    #[error("channel estimation failure: {0}")]
    ChannelEstimation(String),

    /// Covariance matrix violates the uncertainty principle.
    #[error("unphysical covariance matrix: {0}")]
    Physicality(String),

    /// Failure reported by one ensemble copy, with its index attached.
    #[error("copy {index}: {source}")]
    InCopy {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn in_copy(index: usize, source: Error) -> Self {
        Error::InCopy {
            index,
            source: Box::new(source),
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 physics/sync, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) => 2,
            Error::Io(_) => 4,
            Error::InCopy { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
