use adcgs_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("initialization error: {0}")]
    Init(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("container error: {0}")]
    Container(#[from] ContainerError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Structural failures of a compressed file.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("checksum mismatch in section {0}")]
    Checksum(u8),
    #[error("truncated: {0}")]
    Truncated(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Config(format!("json: {e}"))
    }
}

impl CoreError {
    /// Process exit code: 2 config, 3 data, 4 numeric, 5 decode, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Data(_) | CoreError::Init(_) | CoreError::Io(_) => 3,
            CoreError::Tensor(TensorError::Checkpoint(_) | TensorError::Io(_)) => 3,
            CoreError::Numeric(_) => 4,
            CoreError::Decode(_) | CoreError::Container(_) => 5,
            CoreError::Contract(_) | CoreError::Tensor(_) => 1,
        }
    }
}
