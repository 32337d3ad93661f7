//! Error taxonomy shared by the library and the CLI.
//!
//! The variants map onto the CLI exit codes: input errors (2), configuration
//! errors (3), numerical failures (4) and non-convergence (5).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (files, dimensions, non-finite values).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration detected before any sampling starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical operation failed (non-SPD system, non-convergent decomposition, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A diagnostic was requested on data that cannot support it (empty chain, single chain, ...).
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// Convergence threshold exceeded in strict mode.
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

impl Error {
    /// Machine-readable code for CLI reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "E_INPUT",
            Error::Config(_) => "E_CONFIG",
            Error::Numerical(_) => "E_NUMERICAL",
            Error::Diagnostic(_) => "E_DIAGNOSTIC",
            Error::NonConvergence(_) => "E_NONCONVERGENCE",
        }
    }

    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Config(_) => 3,
            Error::Numerical(_) => 4,
            // Diagnostics that cannot run are treated as input problems.
            Error::Diagnostic(_) => 2,
            Error::NonConvergence(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
