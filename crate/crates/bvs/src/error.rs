use thiserror::Error;

#[derive(Debug, Error)]
pub enum BvsError {
    #[error("singular design for model {model}: {detail}")]
    Singular { model: String, detail: String },
    #[error("models are not strictly nested: {0}")]
    NotNested(String),
    #[error("degenerate quantity: {0}")]
    Degenerate(String),
    #[error("ground truth required but absent from dataset")]
    MissingTruth,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("model space has {count} models, above the enumeration cap {cap}; use the orthogonal DP or Gibbs engine")]
    CapExceeded { count: f64, cap: f64 },
    #[error("quadrature did not converge (partial value {partial}, error estimate {error})")]
    Quadrature { partial: f64, error: f64 },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BvsError>;
