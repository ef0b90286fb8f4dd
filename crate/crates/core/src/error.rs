use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate weight on cell {cell}: eps = delta = 0 and zero gradient")]
    DegenerateWeight { cell: usize },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("linear solver failed: {reason} (condition estimate {condition_estimate:.3e})")]
    LinearSolver {
        reason: String,
        condition_estimate: f64,
    },

    #[error("nonlinear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("line search failed at iteration {iteration} (residual {residual:.3e})")]
    LineSearch { iteration: usize, residual: f64 },

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("wrong scheme: {0}")]
    WrongScheme(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
