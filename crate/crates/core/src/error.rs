use thiserror::Error;

/// Errors surfaced by the numerical layer and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("Riccati solution escapes to {value:e} at node {node}")]
    FiniteEscape { node: usize, value: f64 },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("optimizer diverged at epoch {epoch}: cost {cost:e}")]
    Divergence { epoch: usize, cost: f64 },

    #[error("noise bank fingerprint mismatch: {0}")]
    BankMismatch(String),

    #[error("corrupt cache entry: {0}")]
    CorruptCache(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} failed at iteration {iteration}: {source}")]
    Stage {
        stage: String,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn at_stage(self, stage: impl Into<String>, iteration: usize) -> Self {
        Error::Stage { stage: stage.into(), iteration, source: Box::new(self) }
    }

    /// Innermost error, unwrapping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
