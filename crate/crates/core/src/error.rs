use thiserror::Error;

/// Errors raised by the toolkit. Each variant belongs to one of the
/// failure classes the command-line front end maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("degenerate element {element}: volume {volume:e}")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("source point {index} at {point:?} is not strictly inside a single element")]
    SourceOnBoundary { index: usize, point: [f64; 3] },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("observation support mismatch: {0}")]
    Support(String),

    #[error("observation mesh hash {found} does not match mesh hash {expected}")]
    MeshHashMismatch { expected: String, found: String },

    #[error("step size stagnation: quadratic model has zero curvature")]
    Stagnation,

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite objective at iteration {0}")]
    NonFinite(usize),

    #[error("malformed observation file, line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Mesh,
    Solver,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Mesh => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Io => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Usage(_) => ErrorClass::Config,
            Error::Mesh(_)
            | Error::DegenerateElement { .. }
            | Error::SourceOnBoundary { .. }
            | Error::MeshHashMismatch { .. }
            | Error::Support(_) => ErrorClass::Mesh,
            Error::Singular(_)
            | Error::Dimension { .. }
            | Error::Stagnation
            | Error::NonFinite(_) => ErrorClass::Solver,
            Error::Iteration { source, .. } => source.class(),
            Error::Io(_) | Error::Parse { .. } => ErrorClass::Io,
        }
    }
}
