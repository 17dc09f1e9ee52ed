//! Synthetic shape data plus the voxel-grid and checkpoint file formats.

pub mod checkpoint;
pub mod grid;
pub mod synth;

use std::path::Path;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_checkpoint, save_model, StoredTensor,
};
pub use grid::{read_voxels, stack_grids, write_voxels, VoxelGrid};
pub use synth::{centered_sphere, gen_dataset, gen_sample, latent_for, ShapeFamily, ShapeParams, SynthSample};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled grids with their latent codes, as training consumes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub voxels: Vec<VoxelGrid>,
    pub labels: Vec<usize>,
    /// `(N, latent_dim)`
    pub latents: Tensor<f32>,
}

impl Dataset {
    pub fn from_samples(samples: &[SynthSample]) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.latent.len());
        let latents = Tensor::new(&[samples.len(), dim], samples.iter().flat_map(|s| s.latent.iter().copied()).collect())?;
        Ok(Self {
            voxels: samples.iter().map(|s| s.voxels.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            latents,
        })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.voxels.first().map_or(0, |v| v.resolution())
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

const LABELS_FILE: &str = "labels.csv";
const LATENTS_FILE: &str = "latents.vwt";

fn grid_file(i: usize) -> String {
    format!("{i:04}.vox")
}

/// Writes `NNNN.vox` per sample, `labels.csv` and `latents.vwt` into `dir`.
pub fn save_dataset(samples: &[SynthSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    labels.write_record(["index", "file", "label", "family"])?;
    for s in samples {
        write_voxels(&s.voxels, dir.join(grid_file(s.index)))?;
        labels.write_record([s.index.to_string(), grid_file(s.index), s.label.to_string(), s.params.family.to_string()])?;
    }
    labels.flush()?;
    let data = Dataset::from_samples(samples)?;
    save_checkpoint(&[("latents".to_string(), data.latents)], dir.join(LATENTS_FILE))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut reader = csv::Reader::from_path(dir.join(LABELS_FILE))?;
    let mut voxels = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).ok_or_else(|| Error::InvalidArgument(format!("{LABELS_FILE}: short row")));
        voxels.push(read_voxels(dir.join(field(1)?))?);
        labels.push(
            field(2)?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{LABELS_FILE}: bad label `{}`", field(2).unwrap_or(""))))?,
        );
    }
    let latents = load_checkpoint(dir.join(LATENTS_FILE))?
        .into_iter()
        .find(|(n, _)| n == "latents")
        .ok_or_else(|| Error::MissingTensor("latents".into()))?
        .1
        .cast::<f32>();
    if latents.rank() != 2 || latents.dim(0) != voxels.len() {
        return Err(Error::InvalidShape(format!("latents {:?} for {} samples", latents.shape(), voxels.len())));
    }
    Ok(Dataset { voxels, labels, latents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = gen_dataset(5, 8, 3, Seed(2)).unwrap();
        save_dataset(&samples, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, Dataset::from_samples(&samples).unwrap());
        assert_eq!(back.classes(), 3);
    }
}
