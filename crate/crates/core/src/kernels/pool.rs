use rayon::prelude::*;

use super::geometry::{split5, volume, Window};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel window maximum. Returns the pooled tensor and, for every
/// output element, the flat input index it was taken from (first maximum on
/// ties).
pub fn maxpool3d_with_indices<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, dims) = split5(input, "maxpool3d")?;
    let win = Window {
        kernel: [window; 3],
        stride: [stride; 3],
        pad: [0; 3],
    };
    let od = win.output_dims(dims)?;
    let (p_in, p_out) = (volume(dims), volume(od));
    let mut out = Tensor::zeros(&[n, c, od[0], od[1], od[2]]);
    let mut idx = vec![0usize; n * c * p_out];
    if p_out == 0 {
        return Ok((out, idx));
    }
    out.data_mut()
        .par_chunks_mut(p_out)
        .zip(idx.par_chunks_mut(p_out))
        .enumerate()
        .for_each(|(nc, (o, ix))| {
            let base = nc * p_in;
            let x = &input.data()[base..base + p_in];
            let [_, h, w] = dims;
            for od0 in 0..od[0] {
                for od1 in 0..od[1] {
                    for od2 in 0..od[2] {
                        let mut best = T::neg_infinity();
                        let mut arg = usize::MAX;
                        for i in 0..window {
                            for j in 0..window {
                                for l in 0..window {
                                    let off = ((od0 * stride + i) * h + od1 * stride + j) * w + od2 * stride + l;
                                    if arg == usize::MAX || x[off] > best {
                                        best = x[off];
                                        arg = off;
                                    }
                                }
                            }
                        }
                        let q = (od0 * od[1] + od1) * od[2] + od2;
                        o[q] = best;
                        ix[q] = base + arg;
                    }
                }
            }
        });
    Ok((out, idx))
}

pub fn maxpool3d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool3d_with_indices(input, window, stride).map(|(t, _)| t)
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool3d_backward<T: Scalar>(input_shape: &[usize], indices: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if indices.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool3d_backward",
            left: vec![indices.len()],
            right: grad_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}
