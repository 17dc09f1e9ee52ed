//! Parametric solids standing in for a real shape collection. Every sample
//! is a pure function of `(seed, index)`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::grid::VoxelGrid;
use crate::error::{Error, Result};
use crate::tensor::Seed;

pub const MAX_CLASSES: usize = 13;
pub const LATENT_DIM: usize = 2048;
const PROJECTION_SEED: Seed = Seed(0x5EED_1A7E_u64);
const LATENT_NOISE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cross,
    Shell,
    Cylinder,
    Cone,
    Torus,
    Ellipsoid,
    Pyramid,
    Capsule,
    Slab,
    LShape,
    HollowBox,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; MAX_CLASSES] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Cross,
        ShapeFamily::Shell,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Ellipsoid,
        ShapeFamily::Pyramid,
        ShapeFamily::Capsule,
        ShapeFamily::Slab,
        ShapeFamily::LShape,
        ShapeFamily::HollowBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Cross => "cross",
            ShapeFamily::Shell => "shell",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Ellipsoid => "ellipsoid",
            ShapeFamily::Pyramid => "pyramid",
            ShapeFamily::Capsule => "capsule",
            ShapeFamily::Slab => "slab",
            ShapeFamily::LShape => "l_shape",
            ShapeFamily::HollowBox => "hollow_box",
        }
    }

    /// Membership test in the solid's local frame, roughly `[-1, 1]^3`.
    pub fn contains(self, [x, y, z]: [f64; 3]) -> bool {
        let inf = x.abs().max(y.abs()).max(z.abs());
        match self {
            ShapeFamily::Sphere => x * x + y * y + z * z <= 1.0,
            ShapeFamily::Box => x.abs() <= 1.0 && y.abs() <= 0.7 && z.abs() <= 0.5,
            ShapeFamily::Cross => {
                let t = 0.3;
                inf <= 1.0 && [x, y, z].iter().filter(|v| v.abs() <= t).count() >= 2
            }
            ShapeFamily::Shell => {
                let r2 = x * x + y * y + z * z;
                (0.6 * 0.6..=1.0).contains(&r2)
            }
            ShapeFamily::Cylinder => x * x + y * y <= 0.36 && z.abs() <= 1.0,
            ShapeFamily::Cone => {
                let r = 0.9 * (1.0 - z) / 2.0;
                z.abs() <= 1.0 && x * x + y * y <= r * r
            }
            ShapeFamily::Torus => {
                let ring = (x * x + y * y).sqrt() - 0.65;
                ring * ring + z * z <= 0.3 * 0.3
            }
            ShapeFamily::Ellipsoid => x * x + (y / 0.6).powi(2) + (z / 0.35).powi(2) <= 1.0,
            ShapeFamily::Pyramid => {
                let half = 0.9 * (1.0 - z) / 2.0;
                z.abs() <= 1.0 && x.abs() <= half && y.abs() <= half
            }
            ShapeFamily::Capsule => {
                let cx = x.clamp(-0.6, 0.6);
                (x - cx).powi(2) + y * y + z * z <= 0.4 * 0.4
            }
            ShapeFamily::Slab => x.abs() <= 1.0 && y.abs() <= 1.0 && z.abs() <= 0.2,
            ShapeFamily::LShape => {
                z.abs() <= 0.5 && inf <= 1.0 && (y <= -0.4 || x <= -0.4)
            }
            ShapeFamily::HollowBox => inf <= 1.0 && x.abs().max(y.abs()) >= 0.6,
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pose and size of one solid, in grid-normalized units where the grid
/// spans `[-1, 1]` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    pub family: ShapeFamily,
    pub center: [f64; 3],
    /// Half-size of the solid relative to the half grid.
    pub scale: f64,
    /// Stretch along the local x axis.
    pub aspect: f64,
    /// Rotation about the depth axis, radians.
    pub yaw: f64,
}

impl ShapeParams {
    pub fn jittered(family: ShapeFamily, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut center = [0.0; 3];
        for c in &mut center {
            *c = rng.gen_range(-0.1..0.1);
        }
        Self {
            family,
            center,
            scale: rng.gen_range(0.55..0.8),
            aspect: rng.gen_range(0.85..1.15),
            yaw: rng.gen_range(-0.4..0.4),
        }
    }

    /// Fixed-length numeric description fed into the latent projection.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; MAX_CLASSES];
        let idx = ShapeFamily::ALL.iter().position(|f| *f == self.family).unwrap();
        v[idx] = 1.0;
        v.extend(self.center);
        v.extend([self.scale, self.aspect, self.yaw]);
        v
    }

    pub fn rasterize(&self, resolution: usize) -> Result<VoxelGrid> {
        let r = resolution as f64;
        let (sin, cos) = self.yaw.sin_cos();
        VoxelGrid::from_fn(resolution, |d, h, w| {
            let world = [d, h, w].map(|i| (i as f64 + 0.5) / r * 2.0 - 1.0);
            // grid axes (d, h, w) map to local (z, y, x)
            let px = world[2] - self.center[2];
            let py = world[1] - self.center[1];
            let pz = world[0] - self.center[0];
            let lx = (cos * px + sin * py) / (self.scale * self.aspect);
            let ly = (-sin * px + cos * py) / self.scale;
            let lz = pz / self.scale;
            self.family.contains([lx, ly, lz])
        })
    }
}

/// Sphere of `radius` voxels centered in the grid.
pub fn centered_sphere(resolution: usize, radius: f64) -> Result<VoxelGrid> {
    let c = resolution as f64 / 2.0;
    VoxelGrid::from_fn(resolution, |d, h, w| {
        let sq = |i: usize| (i as f64 + 0.5 - c).powi(2);
        sq(d) + sq(h) + sq(w) <= radius * radius
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub index: usize,
    pub label: usize,
    pub params: ShapeParams,
    pub voxels: VoxelGrid,
    pub latent: Vec<f32>,
}

/// Fixed projection shared by every dataset; its seed does not depend on the
/// dataset seed.
fn projection_row(row: usize, features: &[f64]) -> f64 {
    let mut rng = PROJECTION_SEED.derive(row as u64).rng();
    features.iter().map(|f| f * rng.sample::<f64, _>(StandardNormal)).sum()
}

/// Latent code of a sample: fixed projection of its shape parameters plus
/// noise drawn from `noise_seed`.
pub fn latent_for(params: &ShapeParams, noise_seed: Seed) -> Vec<f32> {
    let features = params.feature_vector();
    let mut noise = noise_seed.rng();
    (0..LATENT_DIM)
        .map(|row| {
            let n: f64 = noise.sample(StandardNormal);
            (projection_row(row, &features) + LATENT_NOISE * n) as f32
        })
        .collect()
}

/// Sample `index` of the dataset with the given seed. Classes cycle through
/// the first `n_classes` families.
pub fn gen_sample(index: usize, resolution: usize, n_classes: usize, seed: Seed) -> Result<SynthSample> {
    let label = index % n_classes;
    let sample_seed = seed.derive(index as u64);
    let params = ShapeParams::jittered(ShapeFamily::ALL[label], sample_seed.derive(0));
    Ok(SynthSample {
        index,
        label,
        voxels: params.rasterize(resolution)?,
        latent: latent_for(&params, sample_seed.derive(1)),
        params,
    })
}

pub fn gen_dataset(n_samples: usize, resolution: usize, n_classes: usize, seed: Seed) -> Result<Vec<SynthSample>> {
    if !(2..=MAX_CLASSES).contains(&n_classes) {
        return Err(Error::InvalidArgument(format!("class count must be in 2..={MAX_CLASSES}, got {n_classes}")));
    }
    VoxelGrid::empty(resolution)?;
    (0..n_samples)
        .into_par_iter()
        .map(|i| gen_sample(i, resolution, n_classes, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_volume() {
        for r in [6.0, 9.0, 12.5] {
            let n = centered_sphere(32, r).unwrap().occupied() as f64;
            let want = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
            assert!((n - want).abs() / want < 0.05, "r={r}: {n} vs {want}");
        }
    }

    #[test]
    fn every_family_is_nonempty_and_not_full() {
        for f in ShapeFamily::ALL {
            let p = ShapeParams::jittered(f, Seed(4));
            let g = p.rasterize(16).unwrap();
            assert!(g.occupied() > 10 && g.occupied() < 16 * 16 * 16, "{f}: {}", g.occupied());
        }
    }

    #[test]
    fn order_independent() {
        let all = gen_dataset(6, 8, 3, Seed(9)).unwrap();
        assert_eq!(gen_sample(4, 8, 3, Seed(9)).unwrap(), all[4]);
        assert_eq!(latent_for(&all[2].params, Seed(9).derive(2).derive(1)), all[2].latent);
        assert!(gen_dataset(4, 8, 1, Seed(0)).is_err());
        assert!(gen_dataset(4, 10, 3, Seed(0)).is_err());
    }
}
