use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or identifiers that do not match the model.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initialization failed: {message} (residual {residual:.3e})")]
    Initialization { message: String, residual: f64 },

    #[error("newton iteration failed at t = {t} s in mode {mode}: {message} (residual {residual:.3e})")]
    Step {
        t: f64,
        mode: usize,
        message: String,
        residual: f64,
    },

    #[error("junction at t = {t} s ({pre_mode} -> {post_mode}) failed: {message} (residual {residual:.3e})")]
    Junction {
        t: f64,
        pre_mode: usize,
        post_mode: usize,
        message: String,
        residual: f64,
    },

    #[error("sensitivity propagation failed at t = {t} s: {message}")]
    Sensitivity { t: f64, message: String },

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    PowerFlow { iterations: usize, mismatch: f64 },

    #[error("line search failed after {backtracks} backtracks: {message}")]
    LineSearch { backtracks: usize, message: String },

    #[error("{0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Stable machine-readable identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structure(_) => "structure",
            Error::Config(_) => "config",
            Error::Initialization { .. } => "initialization",
            Error::Step { .. } => "step",
            Error::Junction { .. } => "junction",
            Error::Sensitivity { .. } => "sensitivity",
            Error::PowerFlow { .. } => "power_flow",
            Error::LineSearch { .. } => "line_search",
            Error::Unsupported(_) => "unsupported",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }

    /// True for errors raised by the numerical machinery (Newton, power flow,
    /// sensitivity solves) as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Initialization { .. }
                | Error::Step { .. }
                | Error::Junction { .. }
                | Error::Sensitivity { .. }
                | Error::PowerFlow { .. }
                | Error::LineSearch { .. }
        )
    }
}
