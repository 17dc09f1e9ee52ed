use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("{op}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),

    #[error("{0}: backward called without a cached forward pass")]
    MissingCache(&'static str),

    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),

    #[error("batch norm in training mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),

    #[error("model description line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("checkpoint tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("checkpoint has unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Decoding failures of the binary voxel and checkpoint formats.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("unsupported voxel resolution {0}")]
    InvalidResolution(u16),

    #[error("occupancy value {0} outside [0, 1]")]
    InvalidValue(f32),

    #[error("tensor name is not valid UTF-8")]
    InvalidName,

    #[error("tensor extents overflow")]
    ExtentOverflow,
}
