use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sampling rate {sample_rate_mhz} MHz violates Nyquist for a passband reaching {band_edge_mhz} MHz")]
    Nyquist { sample_rate_mhz: f64, band_edge_mhz: f64 },

    #[error("sample-rate mismatch: block is {block_mhz} MHz, configuration expects {config_mhz} MHz")]
    SampleRate { block_mhz: f64, config_mhz: f64 },

    #[error("acquisition window too short: {0}")]
    Coverage(String),

    #[error("degenerate calibration covariance: rank {rank} < requested {requested} rows")]
    RankDeficient { rank: usize, requested: usize },

    #[error("invalid measurement matrix: {0}")]
    Matrix(String),

    #[error("non-coherent sampling: f_in/f_s * K = {cycles:.6} is not an odd integer; choose f_in = J/K * f_s with J odd")]
    NonCoherent { cycles: f64 },

    #[error("zero-energy reference")]
    ZeroReference,

    #[error("reconstruction diverged at iteration {iteration}: objective {objective}")]
    Diverged { iteration: usize, objective: f64 },

    #[error("reachable depth exceeded: voxel at {required_mm:.3} mm but the record covers {reachable_mm:.3} mm")]
    OutOfReach { required_mm: f64, reachable_mm: f64 },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// True for errors caused by the run configuration rather than by data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Nyquist { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
