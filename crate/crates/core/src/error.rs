use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite phase-space state at tau = {tau}")]
    NonFiniteState { tau: f64 },

    #[error("energy shell E = {energy} is unreachable: {reason}")]
    ShellUnreachable { energy: f64, reason: String },

    #[error("energy tolerance exceeded: |H - E| / |E| = {drift:e} > {tol:e}")]
    TolExceeded { drift: f64, tol: f64 },

    #[error("no classical turning points at E = {energy}")]
    NoTurningPoints { energy: f64 },

    #[error("insufficient damping: exp(-eps * t_max) = {residual:e} must be below 1e-3")]
    InsufficientDamping { residual: f64 },

    #[error("grid too small: state {index} (E = {energy}) has relative edge amplitude {edge:e}")]
    GridTooSmall { index: usize, energy: f64, edge: f64 },

    #[error("spectrum truncated: E + 5 eps_E = {needed} exceeds highest retained level {highest}")]
    SpectrumTruncated { needed: f64, highest: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
