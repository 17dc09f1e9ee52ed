use std::collections::HashMap;

use super::spec::{BlockSpec, ConvFlavor, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::kernels::geometry::{ConvGeometry, Window};
use crate::kernels::layers::{
    BatchNormLayer, ConvLayer, ConvTransposeLayer, DepthwiseLayer, Layer, LinearLayer, MaxPoolLayer, Mode, Param,
    PointwiseLayer, ReluLayer, ReshapeLayer,
};
use crate::kernels::pseudo::{horizontal_window, vertical_window};
use crate::tensor::{Scalar, Seed, Tensor};

/// Layers applied one after another.
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self { layers }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input, mode)?;
        for layer in layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// The flavored convolution of a conv unit up to and including its last
/// batch norm; the final ReLU is left to the caller.
pub fn conv_unit_body<T: Scalar>(
    name: &str,
    flavor: ConvFlavor,
    c_in: usize,
    c_out: usize,
    k: usize,
    seed: Seed,
) -> Sequential<T> {
    let geom = ConvGeometry::same(k);
    let layers: Vec<Box<dyn Layer<T>>> = match flavor {
        ConvFlavor::Standard => vec![
            Box::new(ConvLayer::new(&format!("{name}.conv"), c_in, c_out, Window::cubic(k, geom), seed)),
            Box::new(BatchNormLayer::new(&format!("{name}.bn"), c_out)),
        ],
        ConvFlavor::Depthwise => vec![
            Box::new(DepthwiseLayer::new(&format!("{name}.dw"), c_in, k, geom, seed.derive(0))),
            Box::new(BatchNormLayer::new(&format!("{name}.bn1"), c_in)),
            Box::new(ReluLayer::new()),
            Box::new(PointwiseLayer::new(&format!("{name}.pw"), c_in, c_out, seed.derive(1))),
            Box::new(BatchNormLayer::new(&format!("{name}.bn2"), c_out)),
        ],
        ConvFlavor::Pseudo => vec![
            Box::new(ConvLayer::new(&format!("{name}.h"), c_in, c_in, horizontal_window(k, geom), seed.derive(0))),
            Box::new(BatchNormLayer::new(&format!("{name}.bn1"), c_in)),
            Box::new(ReluLayer::new()),
            Box::new(ConvLayer::new(&format!("{name}.v"), c_in, c_out, vertical_window(k, geom), seed.derive(1))),
            Box::new(BatchNormLayer::new(&format!("{name}.bn2"), c_out)),
        ],
    };
    Sequential::new(layers)
}

/// A run of conv units at constant width. With a residual skip the block
/// input is added after the last unit's batch norm, before its ReLU.
pub struct BlockLayer<T> {
    pub spec: BlockSpec,
    pub units: Vec<Sequential<T>>,
    relus: Vec<ReluLayer<T>>,
}

impl<T: Scalar> BlockLayer<T> {
    pub fn new(name: &str, spec: BlockSpec, seed: Seed) -> Self {
        let units = (0..spec.units)
            .map(|j| conv_unit_body(&format!("{name}.{j}"), spec.flavor, spec.channels, spec.channels, spec.k, seed.derive(j as u64)))
            .collect();
        Self {
            spec,
            units,
            relus: (0..spec.units).map(|_| ReluLayer::new()).collect(),
        }
    }
}

impl<T: Scalar> Layer<T> for BlockLayer<T> {
    fn kind(&self) -> &'static str {
        "block"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 5 || input.dim(1) != self.spec.channels {
            return Err(Error::ChannelMismatch {
                op: "block",
                expected: self.spec.channels,
                got: if input.rank() == 5 { input.dim(1) } else { 0 },
            });
        }
        let last = self.units.len() - 1;
        let mut x = input.clone();
        for (j, (unit, relu)) in self.units.iter_mut().zip(&mut self.relus).enumerate() {
            let mut h = unit.forward(&x, mode)?;
            if j == last && self.spec.residual {
                h = h.ew_add(input)?;
            }
            x = relu.forward(&h, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let last = self.units.len() - 1;
        let mut g = grad_out.clone();
        let mut skip = None;
        for j in (0..=last).rev() {
            g = self.relus[j].backward(&g)?;
            if j == last && self.spec.residual {
                skip = Some(g.clone());
            }
            g = self.units[j].backward(&g)?;
        }
        match skip {
            Some(s) => g.ew_add(&s),
            None => Ok(g),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.units.iter().flat_map(|u| u.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.units.iter_mut().flat_map(|u| u.params_mut()).collect()
    }
}

/// Runs a block on `input`; the block keeps what its backward pass needs.
pub fn block_forward<T: Scalar>(input: &Tensor<T>, block: &mut BlockLayer<T>, mode: Mode) -> Result<Tensor<T>> {
    block.forward(input, mode)
}

/// Instantiates one spec layer. `name` prefixes every parameter name.
pub fn build_layer<T: Scalar>(name: &str, layer: &LayerSpec, in_shape: &[usize], seed: Seed) -> Box<dyn Layer<T>> {
    match layer {
        LayerSpec::Linear { inputs, outputs } => Box::new(LinearLayer::new(name, *inputs, *outputs, seed)),
        LayerSpec::Reshape { shape } => Box::new(ReshapeLayer::new(shape.clone())),
        LayerSpec::Flatten => Box::new(ReshapeLayer::new(vec![in_shape.iter().product()])),
        LayerSpec::ConvTranspose { c_in, c_out, k, stride } => {
            Box::new(ConvTransposeLayer::new(name, *c_in, *c_out, *k, *stride, seed))
        }
        LayerSpec::BatchNorm { channels } => Box::new(BatchNormLayer::new(name, *channels)),
        LayerSpec::Relu => Box::new(ReluLayer::new()),
        LayerSpec::Conv { c_in, c_out, k, stride, padding } => {
            let window = Window::cubic(
                *k,
                ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                },
            );
            Box::new(ConvLayer::new(name, *c_in, *c_out, window, seed))
        }
        LayerSpec::ConvUnit { c_in, c_out, k, flavor } => {
            let mut unit = conv_unit_body::<T>(name, *flavor, *c_in, *c_out, *k, seed);
            unit.layers.push(Box::new(ReluLayer::new()));
            Box::new(unit)
        }
        LayerSpec::Block(b) => Box::new(BlockLayer::new(name, *b, seed)),
        LayerSpec::MaxPool { window, stride } => Box::new(MaxPoolLayer::new(*window, *stride)),
    }
}

/// A `ModelSpec` with parameters. Parameter enumeration follows layer
/// declaration order and is stable across runs.
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: &ModelSpec, seed: Seed) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, e)| build_layer(&format!("{i}.{}", e.layer.kind()), &e.layer, &shapes[i], seed.derive(i as u64)))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// `input` is `(N, ..spec.input)`.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != self.spec.input.len() + 1 || input.shape()[1..] != self.spec.input[..] {
            let mut want = vec![input.shape().first().copied().unwrap_or(0)];
            want.extend(&self.spec.input);
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: want,
                right: input.shape().to_vec(),
            });
        }
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Every parameter and buffer, in declaration order.
    pub fn parameters(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            if p.trainable {
                p.grad.fill(T::zero());
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.parameters().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Trainable values plus batch-norm running statistics.
    pub fn stored_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.parameters().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Replaces every parameter and buffer. The set of names and each shape
    /// must match exactly.
    pub fn load_state(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut by_name: HashMap<String, Tensor<T>> = HashMap::with_capacity(tensors.len());
        for (name, t) in tensors {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::UnexpectedTensor(name));
            }
        }
        for p in self.parameters() {
            match by_name.get(&p.name) {
                None => return Err(Error::MissingTensor(p.name.clone())),
                Some(t) if t.shape() != p.value.shape() => {
                    return Err(Error::CheckpointShape {
                        name: p.name.clone(),
                        expected: p.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if by_name.len() != self.parameters().len() {
            let known: std::collections::HashSet<_> = self.parameters().iter().map(|p| p.name.clone()).collect();
            let extra = by_name.keys().find(|k| !known.contains(*k)).cloned().unwrap_or_default();
            return Err(Error::UnexpectedTensor(extra));
        }
        for p in self.parameters_mut() {
            p.value = by_name.remove(&p.name).expect("checked above");
        }
        Ok(())
    }
}
