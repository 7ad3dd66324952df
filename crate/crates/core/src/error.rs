use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid Lipschitz data: {0}")]
    InvalidLipschitz(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The initial point fails strict feasibility; carries the labels of the
    /// violated checks.
    #[error("initial point rejected, violated: {}", .0.join(", "))]
    InitialPoint(Vec<String>),

    #[error("halfspace row {0} has a zero normal")]
    ZeroRow(usize),

    #[error("halfspace set is infeasible")]
    Infeasible,

    #[error("{solver} exceeded its iteration cap of {cap}")]
    IterationCap { solver: &'static str, cap: usize },

    #[error("numerical failure in {0}")]
    Numerical(&'static str),

    /// An iterate broke a guarantee that holds whenever the Lipschitz
    /// constants satisfy their defining inequalities.
    #[error("Lipschitz constants invalid: {0}")]
    LipschitzViolated(String),

    #[error("plant oracle failed at experiment {k}: {message}")]
    Oracle { k: usize, message: String },

    #[error("unknown builtin {0:?}")]
    UnknownBuiltin(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
