use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("field has {found} values, grid has {expected} interior cells")]
    Shape { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty subset: {0}")]
    EmptySubset(String),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("phase {0} vanished")]
    PhaseCollapse(usize),
    #[error("backtracking stalled after {0} halvings")]
    Stalled(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status of the command-line tool: 2 for configuration
    /// problems, 3 for a stalled solve, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Stalled(_) => 3,
            _ => 1,
        }
    }
}
