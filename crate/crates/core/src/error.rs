use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("observation diffusion sigma2 is not invertible at t = {t}")]
    SingularObservationDiffusion { t: f64 },

    #[error("intensity lambda = {value} outside (0, 1) at t = {t}, x = {x:?}, u = {u} (must lie in (0, 1))")]
    IntensityOutOfRange {
        t: f64,
        x: Vec<f64>,
        u: f64,
        value: f64,
    },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("degenerate particle measure at node {node}: {reason}")]
    Degenerate { node: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn degenerate(node: usize, reason: impl Into<String>) -> Self {
        Error::Degenerate {
            node,
            reason: reason.into(),
        }
    }
}
