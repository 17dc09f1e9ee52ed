//! Stateful layers: each owns its parameters, caches what its backward pass
//! needs during `forward`, and accumulates parameter gradients in `backward`.

use super::activation::{relu, relu_backward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward_cached, BatchNormCache, BatchNormState, BnMode};
use super::conv::{conv_window, conv_window_backward, convtranspose3d_backward, convtranspose3d_forward};
use super::depthwise::{
    depthwise3d_backward, depthwise3d_forward, pointwise_backward, pointwise_forward, DepthwiseKernel, PointwiseKernel,
};
use super::geometry::{ConvGeometry, Window};
use super::linear::{fully_connected, fully_connected_backward};
use super::pool::{maxpool3d_backward, maxpool3d_with_indices};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Seed, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor together with its gradient accumulator. Buffers (batch-norm
/// running statistics) are `Param`s with `trainable == false`.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            trainable: false,
            grad: Tensor::zeros(&[0]),
            ..Self::new(name, value)
        }
    }

    fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.axpy(T::one(), g)
    }
}

/// He-style normal initialization, `stddev = sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, seed: Seed) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::randn(shape, seed, T::from_f64_lossy(std))
}

pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Consumes the cached forward state, adds parameter gradients into each
    /// `Param::grad` and returns the gradient with respect to the input.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

/// Bias-free convolution with an arbitrary window. Covers the standard
/// `k x k x k` convolution and the two pseudo-3D steps.
pub struct ConvLayer<T> {
    pub weight: Param<T>,
    pub window: Window,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, window: Window, seed: Seed) -> Self {
        let [kd, kh, kw] = window.kernel;
        let weight = he_normal(&[c_out, c_in, kd, kh, kw], c_in * window.taps(), seed);
        Self::from_weight(name, weight, window)
    }

    pub fn from_weight(name: &str, weight: Tensor<T>, window: Window) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            window,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for ConvLayer<T> {
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = conv_window(input, &self.weight.value, &self.window)?;
        self.cache = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("conv"))?;
        let g = conv_window_backward(&x, &self.weight.value, &self.window, grad_out)?;
        self.weight.accumulate(&g.weights)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight]
    }
}

pub struct DepthwiseLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeometry,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> DepthwiseLayer<T> {
    pub fn new(name: &str, channels: usize, k: usize, geom: ConvGeometry, seed: Seed) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), he_normal(&[channels, k, k, k], k * k * k, seed)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[channels])),
            geom,
            cache: None,
        }
    }

    fn kernel(&self) -> Result<DepthwiseKernel<T>> {
        DepthwiseKernel::new(self.weight.value.clone(), self.bias.value.clone())
    }
}

impl<T: Scalar> Layer<T> for DepthwiseLayer<T> {
    fn kind(&self) -> &'static str {
        "depthwise"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = depthwise3d_forward(input, &self.kernel()?, self.geom)?;
        self.cache = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("depthwise"))?;
        let g = depthwise3d_backward(&x, &self.kernel()?, self.geom, grad_out)?;
        self.weight.accumulate(&g.weights)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct PointwiseLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> PointwiseLayer<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, seed: Seed) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), he_normal(&[c_out, c_in], c_in, seed)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            cache: None,
        }
    }

    fn kernel(&self) -> Result<PointwiseKernel<T>> {
        PointwiseKernel::new(self.weight.value.clone(), self.bias.value.clone())
    }
}

impl<T: Scalar> Layer<T> for PointwiseLayer<T> {
    fn kind(&self) -> &'static str {
        "pointwise"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = pointwise_forward(input, &self.kernel()?)?;
        self.cache = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("pointwise"))?;
        let g = pointwise_backward(&x, &self.kernel()?, grad_out)?;
        self.weight.accumulate(&g.weights)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct ConvTransposeLayer<T> {
    pub weight: Param<T>,
    pub stride: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTransposeLayer<T> {
    /// Fan-in is `c_in * ceil(k / stride)^3`, the largest number of inputs
    /// that reach one output voxel.
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, seed: Seed) -> Self {
        let reach = k.div_ceil(stride.max(1));
        let weight = he_normal(&[c_in, c_out, k, k, k], c_in * reach * reach * reach, seed);
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for ConvTransposeLayer<T> {
    fn kind(&self) -> &'static str {
        "convtranspose"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = convtranspose3d_forward(input, &self.weight.value, self.stride)?;
        self.cache = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("convtranspose"))?;
        let g = convtranspose3d_backward(&x, &self.weight.value, self.stride, grad_out)?;
        self.weight.accumulate(&g.weights)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight]
    }
}

pub struct BatchNormLayer<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<(BatchNormCache<T>, BatchNormState<T>)>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let s = BatchNormState::<T>::new(channels);
        Self {
            gamma: Param::new(format!("{name}.gamma"), s.gamma),
            beta: Param::new(format!("{name}.beta"), s.beta),
            running_mean: Param::buffer(format!("{name}.running_mean"), s.running_mean),
            running_var: Param::buffer(format!("{name}.running_var"), s.running_var),
            eps: s.eps,
            momentum: s.momentum,
            cache: None,
        }
    }

    pub fn state(&self, mode: Mode) -> BatchNormState<T> {
        BatchNormState {
            gamma: self.gamma.value.clone(),
            beta: self.beta.value.clone(),
            running_mean: self.running_mean.value.clone(),
            running_var: self.running_var.value.clone(),
            eps: self.eps,
            momentum: self.momentum,
            mode: match mode {
                Mode::Train => BnMode::Training,
                Mode::Eval => BnMode::Inference,
            },
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNormLayer<T> {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut st = self.state(mode);
        let (y, cache) = batchnorm_forward_cached(input, &mut st)?;
        self.running_mean.value = st.running_mean.clone();
        self.running_var.value = st.running_var.clone();
        self.cache = Some((cache, st));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (cache, st) = self.cache.take().ok_or(Error::MissingCache("batchnorm"))?;
        let g = batchnorm_backward(&cache, &st, grad_out)?;
        self.gamma.accumulate(&g.gamma)?;
        self.beta.accumulate(&g.beta)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Default)]
pub struct ReluLayer<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ReluLayer<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Scalar> Layer<T> for ReluLayer<T> {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(input.clone());
        Ok(relu(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("relu"))?;
        relu_backward(&x, grad_out)
    }
}

pub struct MaxPoolLayer {
    pub window: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPoolLayer {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPoolLayer {
    fn kind(&self) -> &'static str {
        "maxpool"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, idx) = maxpool3d_with_indices(input, self.window, self.stride)?;
        self.cache = Some((input.shape().to_vec(), idx));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, idx) = self.cache.take().ok_or(Error::MissingCache("maxpool"))?;
        maxpool3d_backward(&shape, &idx, grad_out)
    }
}

pub struct LinearLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, seed: Seed) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), he_normal(&[outputs, inputs], inputs, seed)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs])),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for LinearLayer<T> {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = fully_connected(input, &self.weight.value, &self.bias.value)?;
        self.cache = Some(input.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("linear"))?;
        let g = fully_connected_backward(&x, &self.weight.value, &self.bias.value, grad_out)?;
        self.weight.accumulate(&g.weights)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Reshapes every sample to `shape`, keeping the batch axis.
pub struct ReshapeLayer {
    pub shape: Vec<usize>,
    cache: Option<Vec<usize>>,
}

impl ReshapeLayer {
    pub fn new(shape: Vec<usize>) -> Self {
        Self { shape, cache: None }
    }
}

impl<T: Scalar> Layer<T> for ReshapeLayer {
    fn kind(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let mut shape = vec![input.shape().first().copied().unwrap_or(0)];
        shape.extend(&self.shape);
        self.cache = Some(input.shape().to_vec());
        input.clone().reshape(&shape)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or(Error::MissingCache("reshape"))?;
        grad_out.clone().reshape(&shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_fails() {
        let mut l = LinearLayer::<f64>::new("fc", 3, 2, Seed(0));
        assert!(matches!(l.backward(&Tensor::zeros(&[1, 2])), Err(Error::MissingCache("linear"))));
        let x = Tensor::zeros(&[1, 3]);
        l.forward(&x, Mode::Train).unwrap();
        assert!(l.backward(&Tensor::zeros(&[1, 2])).is_ok());
        // the cache is consumed
        assert!(l.backward(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn he_normal_scale() {
        let w = he_normal::<f64>(&[20_000], 8, Seed(3));
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert!((var - 0.25).abs() < 0.02, "var {var}");
    }
}
