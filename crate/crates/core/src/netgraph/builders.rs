use super::spec::{BlockSpec, ConvFlavor, LayerSpec, ModelSpec};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 2048;
pub const CLASSES: usize = 13;

/// Knobs of the reconstruction decoder. `Default` is the full-size network;
/// `width_divisor` shrinks every channel count for quick experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecDecoderConfig {
    pub depth: usize,
    pub residual: bool,
    pub flavor: ConvFlavor,
    pub latent_dim: usize,
    pub width_divisor: usize,
}

impl RecDecoderConfig {
    pub fn new(depth: usize, residual: bool, flavor: ConvFlavor) -> Self {
        Self {
            depth,
            residual,
            flavor,
            latent_dim: LATENT_DIM,
            width_divisor: 1,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let repeats = match self.depth {
            6 => 1,
            16 => 2,
            d => return Err(Error::InvalidArgument(format!("decoder depth must be 6 or 16, got {d}"))),
        };
        let div = self.width_divisor.max(1);
        let width = |c: usize| (c / div).max(1);
        let bridge = width(1024);
        let name = format!(
            "{}rec-{}{}",
            if self.residual { "res" } else { "" },
            self.depth,
            match self.flavor {
                ConvFlavor::Standard => "",
                ConvFlavor::Pseudo => "-pseudo",
                ConvFlavor::Depthwise => "-dw",
            }
        );
        let mut spec = ModelSpec::new(name, self.flavor, vec![self.latent_dim]);
        spec.push_encoder(LayerSpec::Linear {
            inputs: self.latent_dim,
            outputs: bridge,
        });
        spec.push(LayerSpec::Reshape {
            shape: vec![bridge, 1, 1, 1],
        });

        let mut c = bridge;
        let up = |spec: &mut ModelSpec, c_in: usize, c_out: usize, k: usize, stride: usize| {
            spec.push(LayerSpec::ConvTranspose { c_in, c_out, k, stride });
            spec.push(LayerSpec::BatchNorm { channels: c_out });
            spec.push(LayerSpec::Relu);
        };
        up(&mut spec, c, width(256), 4, 1);
        c = width(256);
        let stages = [(256, true), (128, true), (64, true), (32, self.depth == 16)];
        for (i, (out, with_blocks)) in stages.into_iter().enumerate() {
            if i > 0 {
                up(&mut spec, c, width(out), 2, 2);
                c = width(out);
            }
            if with_blocks {
                for _ in 0..repeats {
                    spec.push(LayerSpec::Block(BlockSpec::pair(c, self.residual, self.flavor)));
                }
            }
        }
        spec.push(LayerSpec::Conv {
            c_in: c,
            c_out: 1,
            k: 1,
            stride: 1,
            padding: 0,
        });
        spec.validate()?;
        Ok(spec)
    }
}

/// Decoder from a 2048-d latent to a `1 x 32 x 32 x 32` occupancy logit grid.
pub fn build_rec_decoder(depth: usize, residual: bool, flavor: ConvFlavor) -> Result<ModelSpec> {
    RecDecoderConfig::new(depth, residual, flavor).build()
}

/// Width plan of a VGG variant; `None` marks a 2x2x2 max pool.
pub fn vgg_plan(variant: usize) -> Result<Vec<Option<usize>>> {
    let per_stage: [usize; 5] = match variant {
        13 => [2, 2, 2, 2, 2],
        16 => [2, 2, 3, 3, 3],
        19 => [2, 2, 4, 4, 4],
        v => return Err(Error::InvalidArgument(format!("VGG variant must be 13, 16 or 19, got {v}"))),
    };
    let widths = [64, 128, 256, 512, 512];
    let mut plan = Vec::new();
    for (n, w) in per_stage.into_iter().zip(widths) {
        plan.extend(std::iter::repeat(Some(w)).take(n));
        plan.push(None);
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VggConfig {
    pub variant: usize,
    pub flavor: ConvFlavor,
    pub resolution: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// Every conv width is divided by this (at least 1 channel remains).
    pub width_divisor: usize,
    /// Hidden fully connected widths between the conv stack and the logits.
    pub hidden: Vec<usize>,
}

impl VggConfig {
    pub fn new(variant: usize, flavor: ConvFlavor) -> Self {
        Self {
            variant,
            flavor,
            resolution: 64,
            in_channels: 1,
            classes: CLASSES,
            width_divisor: 1,
            hidden: vec![4096, 4096],
        }
    }

    /// Pools are skipped once the spatial extent has shrunk to 1, so small
    /// grids still produce a valid network.
    pub fn build(&self) -> Result<ModelSpec> {
        if self.resolution == 0 || self.classes == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument("resolution, channels and classes must be positive".into()));
        }
        let plan = vgg_plan(self.variant)?;
        let div = self.width_divisor.max(1);
        let r = self.resolution;
        let name = format!("vgg{}-3d-{}", self.variant, self.flavor);
        let mut spec = ModelSpec::new(name, self.flavor, vec![self.in_channels, r, r, r]);
        let mut c = self.in_channels;
        let mut extent = r;
        for step in plan {
            match step {
                Some(w) => {
                    let w = (w / div).max(1);
                    spec.push(LayerSpec::ConvUnit {
                        c_in: c,
                        c_out: w,
                        k: 3,
                        flavor: self.flavor,
                    });
                    c = w;
                }
                None if extent >= 2 => {
                    spec.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                    extent /= 2;
                }
                None => {}
            }
        }
        spec.push(LayerSpec::Flatten);
        let mut features = c * extent * extent * extent;
        for &h in &self.hidden {
            spec.push(LayerSpec::Linear {
                inputs: features,
                outputs: h,
            });
            spec.push(LayerSpec::Relu);
            features = h;
        }
        spec.push(LayerSpec::Linear {
            inputs: features,
            outputs: self.classes,
        });
        spec.validate()?;
        Ok(spec)
    }
}

/// VGG-B/D/E lifted to 3D on a cubic single-channel grid.
pub fn build_vgg3d(variant: usize, flavor: ConvFlavor, resolution: usize, classes: usize) -> Result<ModelSpec> {
    VggConfig {
        resolution,
        classes,
        ..VggConfig::new(variant, flavor)
    }
    .build()
}
