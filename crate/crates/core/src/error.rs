use thiserror::Error;

/// Errors raised by estimation, inference and data handling.
#[derive(Debug, Error)]
pub enum NprError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate design: no column survived forward selection")]
    DegenerateDesign,

    #[error("insufficient observations: n = {n} but {columns} columns are selected")]
    InsufficientObservations { n: usize, columns: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("separation detected at iteration {iteration}: |theta|_inf = {max_abs:.3} exceeds bound {bound}")]
    Separation {
        iteration: usize,
        max_abs: f64,
        bound: f64,
    },

    #[error("survival data contain no events")]
    NoEvents,

    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,

    #[error("provenance mismatch: fitted column {0} is missing from the new design")]
    ProvenanceMismatch(String),

    #[error("series solve did not converge within {0} terms")]
    NonConvergence(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NprError {
    /// True for failures of the numerical procedures themselves, as opposed to
    /// bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NprError::DegenerateDesign
                | NprError::InsufficientObservations { .. }
                | NprError::Singular(_)
                | NprError::Separation { .. }
                | NprError::NonConvergence(_)
                | NprError::NoEvents
                | NprError::SingleClass
        )
    }
}

pub type Result<T> = std::result::Result<T, NprError>;
