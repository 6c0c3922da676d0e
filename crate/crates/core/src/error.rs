use thiserror::Error;

/// Errors raised by the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {element}: signed area {area:e}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("mesh integrity violated: {0}")]
    MeshIntegrity(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("degenerate tensor: {0}")]
    DegenerateTensor(String),

    #[error("degenerate ratio constraint: {0}")]
    DegenerateRatio(String),

    #[error("cell solutions are stale: the density changed since the last solve")]
    StaleSolutions,

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("remeshing failed: {0}")]
    Remesh(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for degenerate designs, 3 for solver failures,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateDesign(_) | Error::DegenerateRatio(_) | Error::DegenerateTensor(_) => 2,
            Error::Solver(_) | Error::NonFinite(_) => 3,
            _ => 1,
        }
    }
}
