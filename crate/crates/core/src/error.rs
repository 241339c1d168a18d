use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {position}: expected {expected}")]
    Syntax { position: usize, expected: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("frame is not regular: numerical rank {rank} < {expected}")]
    Regularity { rank: usize, expected: usize },

    #[error("distribution is not bracket generating: rank {rank} at maximal depth")]
    NotGenerating { rank: usize },

    #[error("no convergence: {reason} (best residual {best_residual:e})")]
    NoConvergence { reason: String, best_residual: f64 },

    #[error("adaptive step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error("singular Hessian of the extended Lagrangian")]
    SingularHessian,

    #[error("curve is not horizontal: residual {residual:e}")]
    NonHorizontal { residual: f64 },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid sampling region: {0}")]
    InvalidRegion(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "SyntaxError",
            Error::UnknownVariable(_) => "UnknownVariable",
            Error::Domain(_) => "DomainError",
            Error::Regularity { .. } => "RegularityError",
            Error::NotGenerating { .. } => "NotGenerating",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::StepFailure { .. } => "StepFailure",
            Error::SingularHessian => "SingularHessian",
            Error::NonHorizontal { .. } => "NonHorizontal",
            Error::UnknownSystem(_) => "UnknownSystem",
            Error::InvalidRegion(_) => "InvalidRegion",
            Error::Invalid(_) => "InvalidInput",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
