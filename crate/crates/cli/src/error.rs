//! Harness-level error type with machine-readable categories mapped to exit
//! codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl HarnessError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable category string for machine consumption.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Format(_) => "format",
            HarnessError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Format(_) => 4,
            HarnessError::Numeric(_) => 5,
        }
    }
}

impl From<pmsrl_core::rollout::RolloutError> for HarnessError {
    fn from(e: pmsrl_core::rollout::RolloutError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<pmsrl_core::dynamics::DynamicsError> for HarnessError {
    fn from(e: pmsrl_core::dynamics::DynamicsError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<pmsrl_core::gp::GpError> for HarnessError {
    fn from(e: pmsrl_core::gp::GpError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<pmsrl_core::observers::ObserverError> for HarnessError {
    fn from(e: pmsrl_core::observers::ObserverError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<pmsrl_core::policy::PolicyError> for HarnessError {
    fn from(e: pmsrl_core::policy::PolicyError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}
