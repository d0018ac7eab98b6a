use thiserror::Error;

/// Errors raised by the calibration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no quotes")]
    NoQuotes,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no implied vol: price {price} outside the no-arbitrage band ({lower}, {upper})")]
    NoImpliedVol { price: f64, lower: f64, upper: f64 },
    #[error("cholesky factorisation failed (jitter escalated to {jitter:e})")]
    Factorization { jitter: f64 },
    #[error("tridiagonal solve broke down at time step {step}")]
    TridiagonalBreakdown { step: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible initialisation: {0}")]
    InfeasibleInit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::TridiagonalBreakdown { .. }
                | Error::Numerical(_)
                | Error::InfeasibleInit(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
