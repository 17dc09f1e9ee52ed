//! Composite factorized convolutions: the depthwise-separable block and the
//! pseudo-3D pair. Both apply batch norm and ReLU after each of their two
//! steps.

use super::activation::relu;
use super::batchnorm::{batchnorm_forward, BatchNormState};
use super::conv::{conv_window, conv_window_backward, ConvGrads};
use super::depthwise::{depthwise3d_forward, pointwise_forward, DepthwiseKernel, PointwiseKernel};
use super::geometry::{ConvGeometry, Window};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pseudo-3D filters: a `1 x k x k` step over `(H, W)` that keeps the channel
/// count (full channel mixing), then a `k x 1 x 1` step over `D` mapping
/// `c_in -> c_out`. Neither step has a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoKernelPair<T = f64> {
    /// `(c_in, c_in, 1, k, k)`
    pub horizontal: Tensor<T>,
    /// `(c_out, c_in, k, 1, 1)`
    pub vertical: Tensor<T>,
}

impl<T: Scalar> PseudoKernelPair<T> {
    pub fn new(horizontal: Tensor<T>, vertical: Tensor<T>) -> Result<Self> {
        let h = horizontal.shape();
        let v = vertical.shape();
        let ok = h.len() == 5
            && v.len() == 5
            && h[0] == h[1]
            && h[2] == 1
            && h[3] == h[4]
            && h[3] > 0
            && v[1] == h[0]
            && v[2] == h[3]
            && v[3] == 1
            && v[4] == 1;
        if !ok {
            return Err(Error::InvalidShape(format!(
                "pseudo-3D kernels must be (c, c, 1, k, k) and (c_out, c, k, 1, 1), got {h:?} and {v:?}"
            )));
        }
        Ok(Self { horizontal, vertical })
    }

    pub fn k(&self) -> usize {
        self.horizontal.dim(3)
    }

    pub fn c_in(&self) -> usize {
        self.horizontal.dim(0)
    }

    pub fn c_out(&self) -> usize {
        self.vertical.dim(0)
    }

    pub fn horizontal_window(&self, geom: ConvGeometry) -> Window {
        horizontal_window(self.k(), geom)
    }

    pub fn vertical_window(&self, geom: ConvGeometry) -> Window {
        vertical_window(self.k(), geom)
    }

    pub fn param_count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }
}

pub fn horizontal_window(k: usize, geom: ConvGeometry) -> Window {
    Window {
        kernel: [1, k, k],
        stride: [1, geom.stride, geom.stride],
        pad: [0, geom.padding, geom.padding],
    }
}

pub fn vertical_window(k: usize, geom: ConvGeometry) -> Window {
    Window {
        kernel: [k, 1, 1],
        stride: [geom.stride, 1, 1],
        pad: [geom.padding, 0, 0],
    }
}

/// Step one of the pseudo-3D convolution.
pub fn pseudo_horizontal<T: Scalar>(input: &Tensor<T>, pair: &PseudoKernelPair<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    conv_window(input, &pair.horizontal, &pair.horizontal_window(geom))
}

/// Step two of the pseudo-3D convolution.
pub fn pseudo_vertical<T: Scalar>(input: &Tensor<T>, pair: &PseudoKernelPair<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    conv_window(input, &pair.vertical, &pair.vertical_window(geom))
}

pub fn pseudo_horizontal_backward<T: Scalar>(
    input: &Tensor<T>,
    pair: &PseudoKernelPair<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv_window_backward(input, &pair.horizontal, &pair.horizontal_window(geom), grad_out)
}

pub fn pseudo_vertical_backward<T: Scalar>(
    input: &Tensor<T>,
    pair: &PseudoKernelPair<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv_window_backward(input, &pair.vertical, &pair.vertical_window(geom), grad_out)
}

/// horizontal -> BN -> ReLU -> vertical -> BN -> ReLU.
pub fn pseudo3d_forward<T: Scalar>(
    input: &Tensor<T>,
    pair: &PseudoKernelPair<T>,
    bn1: &mut BatchNormState<T>,
    bn2: &mut BatchNormState<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let h = relu(&batchnorm_forward(&pseudo_horizontal(input, pair, geom)?, bn1)?);
    Ok(relu(&batchnorm_forward(&pseudo_vertical(&h, pair, geom)?, bn2)?))
}

/// depthwise -> BN -> ReLU -> pointwise -> BN -> ReLU.
pub fn dwsep_block_forward<T: Scalar>(
    input: &Tensor<T>,
    dw: &DepthwiseKernel<T>,
    bn1: &mut BatchNormState<T>,
    pw: &PointwiseKernel<T>,
    bn2: &mut BatchNormState<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let h = relu(&batchnorm_forward(&depthwise3d_forward(input, dw, geom)?, bn1)?);
    Ok(relu(&batchnorm_forward(&pointwise_forward(&h, pw)?, bn2)?))
}
