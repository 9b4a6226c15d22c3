use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coherence block overloaded: K = {k} needs K < tau_c = {tau_c}")]
    CoherenceOverload { k: usize, tau_c: usize },

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("unknown correlation model `{0}`")]
    UnknownModel(String),

    #[error("degenerate combiner for UE {0}")]
    DegenerateCombiner(usize),

    #[error("invalid SINR coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
