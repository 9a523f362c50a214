use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid configuration or parameter combination.
    #[error("config error: {0}")]
    Config(String),

    /// Data was requested outside the stored horizon. Carries the span that
    /// would have been needed so callers can regenerate with a wider horizon.
    #[error("range error: {what}: need [{need_lo}, {need_hi}], have [{have_lo}, {have_hi}]")]
    Range {
        what: String,
        need_lo: f64,
        need_hi: f64,
        have_lo: f64,
        have_hi: f64,
    },

    /// A call violated an API contract (wrong frame, missing weights, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The spectral gap condition does not hold for the requested parameters.
    #[error("spectral gap violation: {0}")]
    GapViolation(String),

    /// An iteration failed to contract or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The state norm blew past the divergence guard during integration.
    #[error("divergence at step {step}: sigma-norm {norm:.3e} exceeds guard")]
    Divergence { step: usize, norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn range(what: impl Into<String>, need: (f64, f64), have: (f64, f64)) -> Self {
        Error::Range {
            what: what.into(),
            need_lo: need.0,
            need_hi: need.1,
            have_lo: have.0,
            have_hi: have.1,
        }
    }

    /// Process exit code used by the experiment runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GapViolation(_) => 3,
            Error::Numerical(_) | Error::Divergence { .. } => 4,
            _ => 2,
        }
    }
}
