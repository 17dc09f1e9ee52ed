use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which factorization every flavored conv unit in a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvFlavor {
    Standard,
    Pseudo,
    Depthwise,
}

impl ConvFlavor {
    pub const ALL: [ConvFlavor; 3] = [ConvFlavor::Standard, ConvFlavor::Pseudo, ConvFlavor::Depthwise];
}

impl fmt::Display for ConvFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvFlavor::Standard => "standard",
            ConvFlavor::Pseudo => "pseudo",
            ConvFlavor::Depthwise => "dw",
        })
    }
}

impl FromStr for ConvFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "std" => Ok(ConvFlavor::Standard),
            "pseudo" | "pd" => Ok(ConvFlavor::Pseudo),
            "dw" | "depthwise" => Ok(ConvFlavor::Depthwise),
            other => Err(Error::InvalidArgument(format!("unknown flavor `{other}`"))),
        }
    }
}

/// Whether a layer belongs to the encoder bridge or to the network body.
/// Body layers make up the headline parameter total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Body,
}

/// A run of `units` flavored `k x k x k` conv units at constant width. With
/// `residual` the input is added before the last unit's ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub units: usize,
    pub channels: usize,
    pub residual: bool,
    pub flavor: ConvFlavor,
    pub k: usize,
}

impl BlockSpec {
    /// The two-conv block used throughout the decoders.
    pub fn pair(channels: usize, residual: bool, flavor: ConvFlavor) -> Self {
        Self {
            units: 2,
            channels,
            residual,
            flavor,
            k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    Reshape { shape: Vec<usize> },
    Flatten,
    ConvTranspose { c_in: usize, c_out: usize, k: usize, stride: usize },
    BatchNorm { channels: usize },
    Relu,
    /// Bias-free standard convolution that ignores the model flavor.
    Conv { c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize },
    /// Flavored `k x k x k` convolution (same padding) followed by BN and ReLU.
    ConvUnit { c_in: usize, c_out: usize, k: usize, flavor: ConvFlavor },
    Block(BlockSpec),
    MaxPool { window: usize, stride: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConvTranspose { .. } => "convt",
            LayerSpec::BatchNorm { .. } => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvUnit { .. } => "unit",
            LayerSpec::Block(_) => "block",
            LayerSpec::MaxPool { .. } => "maxpool",
        }
    }

    /// Conv units and blocks: the layers counted in the conv subtotal.
    pub fn is_flavored(&self) -> bool {
        matches!(self, LayerSpec::ConvUnit { .. } | LayerSpec::Block(_))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let volume = |s: &[usize]| -> std::result::Result<(usize, [usize; 3]), String> {
            match s {
                [c, d, h, w] => Ok((*c, [*d, *h, *w])),
                _ => Err(format!("{} expects (C, D, H, W), got {s:?}", self.kind())),
            }
        };
        let want_channels = |got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(format!("{} expects {expected} channels, got {got}", self.kind()))
            }
        };
        match self {
            LayerSpec::Linear { inputs, outputs } => match input {
                [n] if n == inputs => Ok(vec![*outputs]),
                _ => Err(format!("linear expects ({inputs}), got {input:?}")),
            },
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(shape.clone())
                } else {
                    Err(format!("cannot reshape {input:?} to {shape:?}"))
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ConvTranspose { c_in, c_out, k, stride } => {
                let (c, dims) = volume(input)?;
                want_channels(c, *c_in)?;
                if *k == 0 || *stride == 0 {
                    return Err("convt needs positive k and stride".into());
                }
                let grow = |e: usize| (e - 1) * stride + k;
                Ok(vec![*c_out, grow(dims[0]), grow(dims[1]), grow(dims[2])])
            }
            LayerSpec::BatchNorm { channels } => {
                want_channels(*input.first().unwrap_or(&0), *channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Conv { c_in, c_out, k, stride, padding } => {
                let (c, dims) = volume(input)?;
                want_channels(c, *c_in)?;
                let mut out = vec![*c_out];
                for e in dims {
                    if *k == 0 || *stride == 0 || e + 2 * padding < *k {
                        return Err(format!("conv k={k} does not fit extent {e}"));
                    }
                    out.push((e + 2 * padding - k) / stride + 1);
                }
                Ok(out)
            }
            LayerSpec::ConvUnit { c_in, c_out, k, .. } => {
                let (c, dims) = volume(input)?;
                want_channels(c, *c_in)?;
                if k % 2 == 0 {
                    return Err(format!("conv unit needs an odd kernel, got {k}"));
                }
                Ok(vec![*c_out, dims[0], dims[1], dims[2]])
            }
            LayerSpec::Block(b) => {
                let (c, _) = volume(input)?;
                want_channels(c, b.channels)?;
                if b.units == 0 || b.k % 2 == 0 {
                    return Err("block needs at least one unit and an odd kernel".into());
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { window, stride } => {
                let (c, dims) = volume(input)?;
                let mut out = vec![c];
                for e in dims {
                    if *window == 0 || *stride == 0 || e < *window {
                        return Err(format!("maxpool window {window} does not fit extent {e}"));
                    }
                    out.push((e - window) / stride + 1);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub part: Part,
    pub layer: LayerSpec,
}

/// Declarative network description. Numerics (`Model`) and cost reports are
/// both derived from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub flavor: ConvFlavor,
    /// Per-sample input shape, without the batch axis.
    pub input: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, flavor: ConvFlavor, input: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            flavor,
            input,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(LayerEntry { part: Part::Body, layer });
        self
    }

    pub fn push_encoder(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(LayerEntry {
            part: Part::Encoder,
            layer,
        });
        self
    }

    /// Per-sample shape after every layer (index 0 is the input). Fails on
    /// the first layer whose input does not chain.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input.clone()];
        for (i, entry) in self.layers.iter().enumerate() {
            match entry.layer {
                LayerSpec::ConvUnit { flavor, .. } | LayerSpec::Block(BlockSpec { flavor, .. }) if flavor != self.flavor => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: flavor {flavor} differs from model flavor {}",
                        self.flavor
                    )));
                }
                _ => {}
            }
            let next = entry
                .layer
                .output_shape(shapes.last().unwrap())
                .map_err(|msg| Error::InvalidShape(format!("layer {i} ({}): {msg}", entry.layer.kind())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    /// Serializes to the line-oriented model description format.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "# volt3d model description\nname={}\nflavor={}\ninput={}\n",
            self.name,
            self.flavor,
            self.input.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
        );
        for entry in &self.layers {
            if entry.part == Part::Encoder {
                out.push_str("encoder ");
            }
            let line = match &entry.layer {
                LayerSpec::Linear { inputs, outputs } => format!("linear {inputs} {outputs}"),
                LayerSpec::Reshape { shape } => format!("reshape {}", join(shape)),
                LayerSpec::Flatten => "flatten".into(),
                LayerSpec::ConvTranspose { c_in, c_out, k, stride } => format!("convt {c_in} {c_out} k={k} s={stride}"),
                LayerSpec::BatchNorm { channels } => format!("bn {channels}"),
                LayerSpec::Relu => "relu".into(),
                LayerSpec::Conv { c_in, c_out, k, stride, padding } => {
                    format!("conv {c_in} {c_out} k={k} s={stride} p={padding}")
                }
                LayerSpec::ConvUnit { c_in, c_out, k, .. } => format!("unit {c_in} {c_out} k={k}"),
                LayerSpec::Block(b) => format!(
                    "block {} units={} k={}{}",
                    b.channels,
                    b.units,
                    b.k,
                    if b.residual { " residual" } else { "" }
                ),
                LayerSpec::MaxPool { window, stride } => format!("maxpool {window} {stride}"),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`ModelSpec::to_text`]. Blank lines and
    /// `#` comments are ignored; `flavor=` must precede flavored layers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("model");
        let mut flavor: Option<ConvFlavor> = None;
        let mut input: Option<Vec<usize>> = None;
        let mut layers = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if !key.contains(' ') {
                    match key.trim() {
                        "name" => name = value.trim().to_string(),
                        "flavor" => flavor = Some(value.trim().parse().map_err(|e: Error| err(e.to_string()))?),
                        "input" => {
                            input = Some(
                                value
                                    .split(',')
                                    .map(|v| v.trim().parse::<usize>().map_err(|e| err(e.to_string())))
                                    .collect::<Result<_>>()?,
                            )
                        }
                        other => return Err(err(format!("unknown header `{other}`"))),
                    }
                    continue;
                }
            }
            let mut words: Vec<&str> = line.split_whitespace().collect();
            let part = if words[0] == "encoder" {
                words.remove(0);
                Part::Encoder
            } else {
                Part::Body
            };
            let Some((&kind, rest)) = words.split_first() else {
                return Err(err("missing layer type".into()));
            };
            let mut positional = Vec::new();
            let mut keyed = std::collections::HashMap::new();
            let mut flags = Vec::new();
            for w in rest {
                if let Some((k, v)) = w.split_once('=') {
                    let v: usize = v.parse().map_err(|_| err(format!("bad value in `{w}`")))?;
                    keyed.insert(k, v);
                } else if let Ok(v) = w.parse::<usize>() {
                    positional.push(v);
                } else {
                    flags.push(*w);
                }
            }
            let pos = |i: usize| positional.get(i).copied().ok_or_else(|| err(format!("`{kind}` needs argument {}", i + 1)));
            let key = |k: &str, default: usize| keyed.get(k).copied().unwrap_or(default);
            let need_flavor = || flavor.ok_or_else(|| err("`flavor=` header must come before flavored layers".into()));
            let layer = match kind {
                "linear" => LayerSpec::Linear {
                    inputs: pos(0)?,
                    outputs: pos(1)?,
                },
                "reshape" => LayerSpec::Reshape {
                    shape: positional.clone(),
                },
                "flatten" => LayerSpec::Flatten,
                "convt" => LayerSpec::ConvTranspose {
                    c_in: pos(0)?,
                    c_out: pos(1)?,
                    k: key("k", 2),
                    stride: key("s", 1),
                },
                "bn" => LayerSpec::BatchNorm { channels: pos(0)? },
                "relu" => LayerSpec::Relu,
                "conv" => LayerSpec::Conv {
                    c_in: pos(0)?,
                    c_out: pos(1)?,
                    k: key("k", 3),
                    stride: key("s", 1),
                    padding: key("p", 0),
                },
                "unit" => LayerSpec::ConvUnit {
                    c_in: pos(0)?,
                    c_out: pos(1)?,
                    k: key("k", 3),
                    flavor: need_flavor()?,
                },
                "block" => LayerSpec::Block(BlockSpec {
                    channels: pos(0)?,
                    units: key("units", 2),
                    k: key("k", 3),
                    residual: flags.contains(&"residual"),
                    flavor: need_flavor()?,
                }),
                "maxpool" => LayerSpec::MaxPool {
                    window: pos(0)?,
                    stride: pos(1).unwrap_or(positional.first().copied().unwrap_or(2)),
                },
                other => return Err(err(format!("unknown layer type `{other}`"))),
            };
            layers.push(LayerEntry { part, layer });
        }
        let spec = ModelSpec {
            name,
            flavor: flavor.ok_or(Error::Parse {
                line: 0,
                msg: "missing `flavor=` header".into(),
            })?,
            input: input.ok_or(Error::Parse {
                line: 0,
                msg: "missing `input=` header".into(),
            })?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flavor_names() {
        for f in ConvFlavor::ALL {
            assert_eq!(f.to_string().parse::<ConvFlavor>().unwrap(), f);
        }
        assert!("winograd".parse::<ConvFlavor>().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "flavor=dw\ninput=1,4,4,4\nunit 1 2\nfrobnicate 3\n";
        match ModelSpec::parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ModelSpec::parse("input=4\nunit 1 2\n").is_err());
    }

    #[test]
    fn chain_violation_detected_at_build_time() {
        let mut spec = ModelSpec::new("bad", ConvFlavor::Standard, vec![2, 4, 4, 4]);
        spec.push(LayerSpec::ConvUnit {
            c_in: 3,
            c_out: 4,
            k: 3,
            flavor: ConvFlavor::Standard,
        });
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::new("mixed", ConvFlavor::Standard, vec![2, 4, 4, 4]);
        spec.push(LayerSpec::Block(BlockSpec::pair(2, true, ConvFlavor::Pseudo)));
        assert!(spec.validate().is_err());
    }
}
