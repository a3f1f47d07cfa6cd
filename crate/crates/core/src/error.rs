use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("line {from}-{to} has zero series impedance")]
    SingularImpedance { from: u32, to: u32 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("singular Newton matrix (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("admittance angle of Y[{from},{to}] = {phi:.6} rad violates the vertex-bound hypothesis")]
    AngleHypothesis { from: u32, to: u32, phi: f64 },

    #[error("vertex budget exceeded: {count} vertices > budget {budget}; {hint}")]
    VertexBudget {
        count: u128,
        budget: u128,
        hint: &'static str,
    },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("gain synthesis failed: {0}")]
    Synthesis(String),

    #[error("certificate rejected: {0}")]
    Certificate(String),

    #[error("simulation aborted at t = {time:.6} s: {source}")]
    Step {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Dimension(_)
                | Error::InvalidEvent(_)
                | Error::SingularImpedance { .. }
                | Error::AngleHypothesis { .. }
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
