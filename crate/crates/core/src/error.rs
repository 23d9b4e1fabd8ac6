use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("index {index} out of range (size {size})")]
    Index { index: usize, size: usize },

    #[error("stationary distribution not found (residual {residual:e}); chain may be periodic or reducible")]
    StationaryNotFound { residual: f64 },

    #[error("model is not unichain within r <= {r_max}; witness pure-policy sequence {witness:?}")]
    NotUnichain { r_max: usize, witness: Vec<Vec<usize>> },

    #[error("projection did not converge after {iterations} iterations (kkt residual {kkt_residual:e})")]
    ProjectionDiverged {
        iterations: usize,
        kkt_residual: f64,
        best: Vec<f64>,
    },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("linear program numerical failure: {0}")]
    LpNumerical(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("slater condition fails: certified margin {eta} <= 0")]
    Slater { eta: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("invariant `{name}` violated in {module}{}: {detail}", slot.map(|s| format!(" at slot {s}")).unwrap_or_default())]
    Invariant {
        module: &'static str,
        name: &'static str,
        slot: Option<usize>,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
