//! Error taxonomy shared by all solver modules.

/// Errors produced by grid construction, field algebra and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid user-facing configuration (grid sizes, occupations, mode rules).
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or violated numeric contracts.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver error: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }
}
