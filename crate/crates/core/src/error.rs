use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weights are already reinterpreted")]
    AlreadyReinterpreted,

    #[error("weights must be reinterpreted before bit-serial packing or lookup")]
    NotReinterpreted,

    #[error("lookup index {index} out of range for a {len}-entry table")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("malformed LMMA instruction `{text}`: {reason}")]
    InstructionSyntax { text: String, reason: String },

    #[error("unsupported LMMA dtype combination: {0}")]
    InstructionRule(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("tile needs {needed} bytes of on-chip storage but capacity is {capacity}")]
    Capacity { needed: u64, capacity: u64 },

    #[error("hardware config `{hw}` has no peak rate for ({a_dtype}, {w_dtype})")]
    MissingPeak {
        hw: String,
        a_dtype: String,
        w_dtype: String,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("tensor file: {0}")]
    TensorFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
