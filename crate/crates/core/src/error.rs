use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("ego `{0}` has no state at the prediction step")]
    MissingEgoState(String),

    #[error("scene has no observed agents and no polylines")]
    EmptyScene,

    #[error("viewpoint lies inside the occluder footprint")]
    ViewpointInsideFootprint,

    #[error("no occlusion: {0}")]
    NoOcclusion(String),

    #[error("unknown agent `{0}`")]
    UnknownAgent(String),

    #[error("rejection sampling exhausted after {proposals} proposals: {what}")]
    SamplingExhausted { what: String, proposals: usize },

    #[error("line {line}: {path}: {msg}")]
    Schema { line: usize, path: String, msg: String },

    #[error("non-finite loss on sample `{sample}`: {detail}")]
    NonFiniteLoss { sample: String, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
