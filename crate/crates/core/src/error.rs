use thiserror::Error;

pub type Result<T> = std::result::Result<T, FoagpError>;

#[derive(Debug, Error)]
pub enum FoagpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate kernel: grand mean {grand_mean:e} is below the floor {floor:e}")]
    DegenerateKernel { grand_mean: f64, floor: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {message} (min eigenvalue estimate {min_eigenvalue:e})")]
    Numerical { message: String, min_eigenvalue: f64 },

    #[error("degenerate response: the centered response vector is zero")]
    DegenerateResponse,

    #[error("all {} restarts failed: {}", .0.len(), .0.join("; "))]
    FitFailure(Vec<String>),

    #[error("invalid effect subset {subset:?} for {dims} input dimensions")]
    InvalidSubset { subset: Vec<usize>, dims: usize },

    #[error("refusing to enumerate {count} effect subsets (limit {limit})")]
    TooManySubsets { count: u128, limit: u128 },

    #[error("value {value} is outside the domain [-1, 1]")]
    Domain { value: f64 },

    #[error("least-squares solver failed: {0}")]
    Solver(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FoagpError {
    /// True for errors caused by the caller's data or arguments rather than by
    /// a numerical failure during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FoagpError::InvalidInput(_)
                | FoagpError::InsufficientData { .. }
                | FoagpError::Shape(_)
                | FoagpError::InvalidSubset { .. }
                | FoagpError::TooManySubsets { .. }
                | FoagpError::Domain { .. }
                | FoagpError::Unsupported(_)
                | FoagpError::Format(_)
                | FoagpError::Json(_)
                | FoagpError::Io(_)
        )
    }
}
