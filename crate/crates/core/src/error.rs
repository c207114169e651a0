use thiserror::Error;

#[derive(Debug, Error)]
pub enum RanpError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("layer `{layer}`: {detail}")]
    Layer { layer: String, detail: String },

    #[error("unknown input layer `{input}` referenced by `{layer}`")]
    UnknownInput { layer: String, input: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("infeasible masks: layers with no retained neurons: {}", .0.join(", "))]
    Infeasible(Vec<String>),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RanpError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> RanpError {
    RanpError::Shape { op, detail: detail.into() }
}
