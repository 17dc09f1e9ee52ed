pub mod cost;
pub mod error;
pub mod kernels;
pub mod netgraph;
pub mod oracle;
pub mod tensor;
pub mod training;
pub mod voxio;

pub use error::{Error, Result};
pub use netgraph::{ConvFlavor, Model, ModelSpec};
pub use tensor::{DType, Scalar, Seed, Tensor};
