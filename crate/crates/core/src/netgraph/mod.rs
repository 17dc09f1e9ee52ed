//! Declarative model descriptions, block composition, the decoder and VGG
//! builders, and parameterized models built from a description.

pub mod builders;
pub mod model;
pub mod spec;

pub use builders::{build_rec_decoder, build_vgg3d, vgg_plan, RecDecoderConfig, VggConfig, CLASSES, LATENT_DIM};
pub use model::{block_forward, build_layer, conv_unit_body, BlockLayer, Model, Sequential};
pub use spec::{BlockSpec, ConvFlavor, LayerEntry, LayerSpec, ModelSpec, Part};
