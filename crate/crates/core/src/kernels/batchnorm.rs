use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running averages.
    Training,
    /// Normalize with the running averages.
    Inference,
}

/// Per-channel batch normalization parameters and running statistics.
///
/// Only `gamma` and `beta` are trainable; the running averages are buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
    pub mode: BnMode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: T::from_f64_lossy(DEFAULT_EPS),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
            mode: BnMode::Training,
        }
    }

    /// Inference-mode state that maps every input to itself (up to `eps`).
    pub fn identity(channels: usize) -> Self {
        Self {
            mode: BnMode::Inference,
            ..Self::new(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Values saved by the forward pass for [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: BnMode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn layout<T: Scalar>(input: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let s = input.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "batchnorm needs (N, C, ...), got {s:?}"
        )));
    }
    if s[1] != channels {
        return Err(Error::ChannelMismatch {
            op: "batchnorm",
            expected: channels,
            got: s[1],
        });
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Strided view over one channel: `n` runs of `spatial` values.
fn channel_values<T: Copy>(data: &[T], c: usize, channels: usize, n: usize, spatial: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| {
        let start = (b * channels + c) * spatial;
        data[start..start + spatial].iter().copied()
    })
}

pub fn batchnorm_forward<T: Scalar>(input: &Tensor<T>, state: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    batchnorm_forward_cached(input, state).map(|(y, _)| y)
}

/// Training mode normalizes each channel over `(N, D, H, W)` with the biased
/// batch variance and folds the batch mean and unbiased variance into the
/// running averages with `momentum`.
pub fn batchnorm_forward_cached<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c = state.channels();
    let (n, spatial) = layout(input, c)?;
    let m = n * spatial;
    let (mean, var) = match state.mode {
        BnMode::Training => {
            if m < 2 {
                return Err(Error::DegenerateBatch(m));
            }
            let mf = T::from_usize(m).unwrap();
            let stats: Vec<(T, T)> = (0..c)
                .into_par_iter()
                .map(|ch| {
                    let mean = channel_values(input.data(), ch, c, n, spatial).sum::<T>() / mf;
                    let var = channel_values(input.data(), ch, c, n, spatial)
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<T>()
                        / mf;
                    (mean, var)
                })
                .collect();
            let unbias = mf / (mf - T::one());
            let mom = state.momentum;
            for (ch, &(mu, var)) in stats.iter().enumerate() {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mu;
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * var * unbias;
            }
            stats.into_iter().unzip::<_, _, Vec<T>, Vec<T>>()
        }
        BnMode::Inference => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();

    let mut xhat = Tensor::zeros(input.shape());
    let mut y = Tensor::zeros(input.shape());
    let plane = spatial.max(1);
    if !input.is_empty() {
        xhat.data_mut()
            .par_chunks_mut(plane)
            .zip(y.data_mut().par_chunks_mut(plane))
            .enumerate()
            .for_each(|(bc, (xh, yo))| {
                let ch = bc % c;
                let x = &input.data()[bc * spatial..(bc + 1) * spatial];
                let (g, bt) = (state.gamma.data()[ch], state.beta.data()[ch]);
                for ((h, o), &v) in xh.iter_mut().zip(yo.iter_mut()).zip(x) {
                    *h = (v - mean[ch]) * inv_std[ch];
                    *o = g * *h + bt;
                }
            });
    }
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mode: state.mode,
        },
    ))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_backward",
            left: cache.xhat.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let c = state.channels();
    let (n, spatial) = layout(grad_out, c)?;
    let m = T::from_usize(n * spatial).unwrap();
    let sums: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let dbeta = channel_values(grad_out.data(), ch, c, n, spatial).sum::<T>();
            let dgamma = channel_values(grad_out.data(), ch, c, n, spatial)
                .zip(channel_values(cache.xhat.data(), ch, c, n, spatial))
                .map(|(g, h)| g * h)
                .sum::<T>();
            (dgamma, dbeta)
        })
        .collect();

    let mut dx = Tensor::zeros(grad_out.shape());
    let plane = spatial.max(1);
    if !grad_out.is_empty() {
        dx.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(bc, dxp)| {
                let ch = bc % c;
                let scale = state.gamma.data()[ch] * cache.inv_std[ch];
                let dy = &grad_out.data()[bc * spatial..(bc + 1) * spatial];
                match cache.mode {
                    BnMode::Inference => {
                        for (o, &g) in dxp.iter_mut().zip(dy) {
                            *o = scale * g;
                        }
                    }
                    BnMode::Training => {
                        let (dgamma, dbeta) = sums[ch];
                        let xh = &cache.xhat.data()[bc * spatial..(bc + 1) * spatial];
                        for ((o, &g), &h) in dxp.iter_mut().zip(dy).zip(xh) {
                            *o = scale / m * (m * g - dbeta - h * dgamma);
                        }
                    }
                }
            });
    }
    let (dgamma, dbeta): (Vec<T>, Vec<T>) = sums.into_iter().unzip();
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    #[test]
    fn hand_computed_training_output() {
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        let y = batchnorm_forward(&x, &mut st).unwrap();
        // var = 2/3; 1 / sqrt(2/3 + 1e-5) = 1.224735...
        let expect = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
        assert!((y.data()[2] - 1.22473).abs() < 1e-5);
        // running stats: mean 0.1 * 2, var 0.9 + 0.1 * 1 (unbiased)
        assert!((st.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((st.running_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_statistics() {
        let x = Tensor::<f64>::randn(&[2, 3, 2, 2, 2], Seed(8), 3.0).map(|v| v + 4.0);
        let mut st = BatchNormState::<f64>::new(3);
        let y = batchnorm_forward(&x, &mut st).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = channel_values(y.data(), ch, 3, 2, 8).collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn degenerate_batch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1, 1]);
        let mut st = BatchNormState::<f64>::new(2);
        assert!(matches!(batchnorm_forward(&x, &mut st), Err(Error::DegenerateBatch(1))));
        st.mode = BnMode::Inference;
        assert!(batchnorm_forward(&x, &mut st).is_ok());
    }

    #[test]
    fn inference_identity() {
        let x = Tensor::<f64>::randn(&[2, 2, 3], Seed(1), 1.0);
        let mut st = BatchNormState::<f64>::identity(2);
        st.eps = 0.0;
        assert_eq!(batchnorm_forward(&x, &mut st).unwrap(), x);
    }
}
