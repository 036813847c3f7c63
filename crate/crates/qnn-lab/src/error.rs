//! Error type for the experiment harness.

use thiserror::Error;

/// Errors produced while setting up or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    /// Anything that bubbled up from the core library, including training
    /// divergence.
    #[error(transparent)]
    Core(#[from] qnn_core::Error),

    /// Bad experiment setup: missing seeds, malformed architecture string,
    /// out-of-range flag values.
    #[error("invalid experiment setup: {0}")]
    Setup(String),

    /// The config file did not parse as a training configuration.
    #[error("config file: {0}")]
    Config(#[from] toml::de::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
