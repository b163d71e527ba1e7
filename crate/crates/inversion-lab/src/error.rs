//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by schedules, denoisers, samplers, inversion runs and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A prompt token is not present in the prompt table.
    #[error("unknown prompt token {0:?}")]
    UnknownToken(String),

    /// The posterior over clean data collapses (`alpha_bar = 1` with a
    /// zero-width mixture component).
    #[error("degenerate posterior: alpha_bar = 1 with sigma = 0")]
    DegeneratePosterior,

    /// The affine denoiser has no parameter block for the requested timestep.
    #[error("no denoiser parameters at timestep {0}")]
    MissingTimestep(usize),

    /// Least-squares fitting failed.
    #[error("least-squares fit failed at timestep {timestep}: {reason}")]
    Fit { timestep: usize, reason: String },

    /// An optimization loop produced a non-finite or exploding loss.
    #[error("optimization diverged at timestep {timestep}: {detail}")]
    Divergence { timestep: usize, detail: String },

    /// Experiment configuration could not be read or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Report aggregation failed (for example a required table is missing).
    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Config(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for config/parameter problems,
    /// 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Shape(_)
            | Error::UnknownToken(_)
            | Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
