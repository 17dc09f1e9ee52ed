//! Closed-form parameter and multiply-accumulate counts.
//!
//! One MAC is one kernel multiply. Bias adds and batch norm are not counted.

use std::fmt::Write as _;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::netgraph::{ConvFlavor, LayerSpec, ModelSpec, Part};

pub type Rational = Ratio<u128>;

fn product(op: &'static str, factors: &[usize]) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, &f| acc.checked_mul(f as u64).ok_or(Error::Overflow(op)))
}

fn sum(op: &'static str, terms: &[u64]) -> Result<u64> {
    terms.iter().try_fold(0u64, |acc, &t| acc.checked_add(t).ok_or(Error::Overflow(op)))
}

fn positive(op: &'static str, args: &[usize]) -> Result<()> {
    if args.iter().any(|&a| a == 0) {
        return Err(Error::InvalidArgument(format!("{op}: every argument must be at least 1, got {args:?}")));
    }
    Ok(())
}

/// `k^3 * c_f * c_g * l * w * h`
pub fn macs_standard(k: usize, c_f: usize, c_g: usize, l: usize, w: usize, h: usize) -> Result<u64> {
    positive("macs_standard", &[k, c_f, c_g, l, w, h])?;
    product("macs_standard", &[k, k, k, c_f, c_g, l, w, h])
}

/// `k^3 * c_f * lwh + c_f * c_g * lwh`
pub fn macs_depthwise_separable(k: usize, c_f: usize, c_g: usize, l: usize, w: usize, h: usize) -> Result<u64> {
    const OP: &str = "macs_depthwise_separable";
    positive(OP, &[k, c_f, c_g, l, w, h])?;
    sum(OP, &[product(OP, &[k, k, k, c_f, l, w, h])?, product(OP, &[c_f, c_g, l, w, h])?])
}

/// `k^2 * c_f^2 * lwh + k * c_f * c_g * lwh`
pub fn macs_pseudo(k: usize, c_f: usize, c_g: usize, l: usize, w: usize, h: usize) -> Result<u64> {
    const OP: &str = "macs_pseudo";
    positive(OP, &[k, c_f, c_g, l, w, h])?;
    sum(OP, &[product(OP, &[k, k, c_f, c_f, l, w, h])?, product(OP, &[k, c_f, c_g, l, w, h])?])
}

pub fn macs(flavor: ConvFlavor, k: usize, c_f: usize, c_g: usize, l: usize, w: usize, h: usize) -> Result<u64> {
    match flavor {
        ConvFlavor::Standard => macs_standard(k, c_f, c_g, l, w, h),
        ConvFlavor::Depthwise => macs_depthwise_separable(k, c_f, c_g, l, w, h),
        ConvFlavor::Pseudo => macs_pseudo(k, c_f, c_g, l, w, h),
    }
}

/// Depthwise-separable over standard cost: `1/c_g + 1/k^3`.
pub fn reduction_ratio_dw(k: usize, c_g: usize) -> Result<Rational> {
    positive("reduction_ratio_dw", &[k, c_g])?;
    let k3 = (k as u128).pow(3);
    Ok(Rational::new(1, c_g as u128) + Rational::new(1, k3))
}

/// Depthwise-separable over pseudo-3D cost: `(k^3 + c_g) / (k^2 c_f + k c_g)`.
pub fn ratio_dw_vs_pseudo(k: usize, c_f: usize, c_g: usize) -> Result<Rational> {
    positive("ratio_dw_vs_pseudo", &[k, c_f, c_g])?;
    let (k, c_f, c_g) = (k as u128, c_f as u128, c_g as u128);
    Ok(Rational::new(k.pow(3) + c_g, k * k * c_f + k * c_g))
}

/// The large-channel approximation `k / c_f` of [`ratio_dw_vs_pseudo`].
pub fn approx_dw_vs_pseudo(k: usize, c_f: usize) -> Result<Rational> {
    positive("approx_dw_vs_pseudo", &[k, c_f])?;
    Ok(Rational::new(k as u128, c_f as u128))
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Which tensors count as parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountConvention {
    pub biases: bool,
    pub bn_affine: bool,
    pub bn_running: bool,
}

impl CountConvention {
    /// Weights, depthwise/pointwise biases and batch-norm gamma/beta.
    pub const PAPER: Self = Self {
        biases: true,
        bn_affine: true,
        bn_running: false,
    };
    /// Everything a checkpoint stores, running statistics included.
    pub const ALL: Self = Self {
        biases: true,
        bn_affine: true,
        bn_running: true,
    };
    pub const WEIGHTS: Self = Self {
        biases: false,
        bn_affine: false,
        bn_running: false,
    };

    fn bn(&self, c: u64) -> u64 {
        c * (2 * self.bn_affine as u64 + 2 * self.bn_running as u64)
    }

    fn bias(&self, c: u64) -> u64 {
        c * self.biases as u64
    }
}

impl Default for CountConvention {
    fn default() -> Self {
        Self::PAPER
    }
}

impl std::str::FromStr for CountConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::PAPER),
            "all" => Ok(Self::ALL),
            "weights" => Ok(Self::WEIGHTS),
            other => Err(Error::InvalidArgument(format!("unknown counting convention `{other}`"))),
        }
    }
}

/// Parameters of one flavored conv unit including its batch norms.
pub fn unit_params(flavor: ConvFlavor, c_in: usize, c_out: usize, k: usize, conv: CountConvention) -> Result<u64> {
    const OP: &str = "unit_params";
    let (ci, co) = (c_in as u64, c_out as u64);
    match flavor {
        ConvFlavor::Standard => sum(OP, &[product(OP, &[k, k, k, c_in, c_out])?, conv.bn(co)]),
        ConvFlavor::Depthwise => sum(
            OP,
            &[
                product(OP, &[k, k, k, c_in])?,
                conv.bias(ci),
                conv.bn(ci),
                product(OP, &[c_in, c_out])?,
                conv.bias(co),
                conv.bn(co),
            ],
        ),
        ConvFlavor::Pseudo => sum(
            OP,
            &[product(OP, &[k, k, c_in, c_in])?, conv.bn(ci), product(OP, &[k, c_in, c_out])?, conv.bn(co)],
        ),
    }
}

/// Parameter count of one spec layer. Flavored layers use `flavor`; all other
/// layers ignore it.
pub fn param_count(layer: &LayerSpec, flavor: ConvFlavor, conv: CountConvention) -> Result<u64> {
    const OP: &str = "param_count";
    match layer {
        LayerSpec::Linear { inputs, outputs } => sum(OP, &[product(OP, &[*inputs, *outputs])?, conv.bias(*outputs as u64)]),
        LayerSpec::Reshape { .. } | LayerSpec::Flatten | LayerSpec::Relu | LayerSpec::MaxPool { .. } => Ok(0),
        LayerSpec::ConvTranspose { c_in, c_out, k, .. } => product(OP, &[*c_in, *c_out, *k, *k, *k]),
        LayerSpec::BatchNorm { channels } => Ok(conv.bn(*channels as u64)),
        LayerSpec::Conv { c_in, c_out, k, .. } => product(OP, &[*c_in, *c_out, *k, *k, *k]),
        LayerSpec::ConvUnit { c_in, c_out, k, .. } => unit_params(flavor, *c_in, *c_out, *k, conv),
        LayerSpec::Block(b) => {
            let unit = unit_params(flavor, b.channels, b.channels, b.k, conv)?;
            unit.checked_mul(b.units as u64).ok_or(Error::Overflow(OP))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub part: Part,
    /// Set for flavored conv units.
    pub flavor: Option<ConvFlavor>,
    /// `(k, c_f, c_g, l, w, h)` for convolutions, with `l, w, h` the output extents.
    pub dims: Option<[usize; 6]>,
    pub params: u64,
    pub macs: u64,
}

impl LayerCost {
    pub fn is_conv_unit(&self) -> bool {
        self.flavor.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub model: String,
    pub flavor: ConvFlavor,
    pub convention: CountConvention,
    pub layers: Vec<LayerCost>,
    /// Flavored conv units only.
    pub conv_params: u64,
    /// Everything except encoder-side layers.
    pub body_params: u64,
    pub total_params: u64,
    pub conv_macs: u64,
    pub total_macs: u64,
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [_, d, h, w] => Ok([*d, *h, *w]),
        _ => Err(Error::InvalidShape(format!("expected (C, D, H, W), got {shape:?}"))),
    }
}

/// Per-layer costs of a model. Blocks are expanded into their conv units.
pub fn model_cost(spec: &ModelSpec, conv: CountConvention) -> Result<CostReport> {
    const OP: &str = "model_cost";
    let shapes = spec.shapes()?;
    let mut layers = Vec::new();
    for (i, entry) in spec.layers.iter().enumerate() {
        let (input, output) = (&shapes[i], &shapes[i + 1]);
        let name = format!("{i}.{}", entry.layer.kind());
        let mut plain = |dims: Option<[usize; 6]>, macs: u64| -> Result<()> {
            layers.push(LayerCost {
                name: name.clone(),
                kind: entry.layer.kind(),
                part: entry.part,
                flavor: None,
                dims,
                params: param_count(&entry.layer, spec.flavor, conv)?,
                macs,
            });
            Ok(())
        };
        match &entry.layer {
            LayerSpec::Linear { inputs, outputs } => plain(None, product(OP, &[*inputs, *outputs])?)?,
            LayerSpec::ConvTranspose { c_in, c_out, k, .. } => {
                let [d, h, w] = spatial(input)?;
                let [od, oh, ow] = spatial(output)?;
                plain(Some([*k, *c_in, *c_out, od, oh, ow]), product(OP, &[*k, *k, *k, *c_in, *c_out, d, h, w])?)?
            }
            LayerSpec::Conv { c_in, c_out, k, .. } => {
                let [d, h, w] = spatial(output)?;
                plain(Some([*k, *c_in, *c_out, d, h, w]), macs_standard(*k, *c_in, *c_out, d, h, w)?)?
            }
            LayerSpec::ConvUnit { c_in, c_out, k, flavor } => {
                let [d, h, w] = spatial(output)?;
                layers.push(LayerCost {
                    name,
                    kind: "unit",
                    part: entry.part,
                    flavor: Some(*flavor),
                    dims: Some([*k, *c_in, *c_out, d, h, w]),
                    params: unit_params(*flavor, *c_in, *c_out, *k, conv)?,
                    macs: macs(*flavor, *k, *c_in, *c_out, d, h, w)?,
                });
            }
            LayerSpec::Block(b) => {
                let [d, h, w] = spatial(output)?;
                for j in 0..b.units {
                    layers.push(LayerCost {
                        name: format!("{name}.{j}"),
                        kind: "unit",
                        part: entry.part,
                        flavor: Some(b.flavor),
                        dims: Some([b.k, b.channels, b.channels, d, h, w]),
                        params: unit_params(b.flavor, b.channels, b.channels, b.k, conv)?,
                        macs: macs(b.flavor, b.k, b.channels, b.channels, d, h, w)?,
                    });
                }
            }
            _ => plain(None, 0)?,
        }
    }
    let total = |f: &dyn Fn(&LayerCost) -> bool, v: &dyn Fn(&LayerCost) -> u64| -> Result<u64> {
        layers.iter().filter(|l| f(l)).try_fold(0u64, |acc, l| acc.checked_add(v(l)).ok_or(Error::Overflow(OP)))
    };
    Ok(CostReport {
        model: spec.name.clone(),
        flavor: spec.flavor,
        convention: conv,
        conv_params: total(&|l| l.is_conv_unit(), &|l| l.params)?,
        body_params: total(&|l| l.part == Part::Body, &|l| l.params)?,
        total_params: total(&|_| true, &|l| l.params)?,
        conv_macs: total(&|l| l.is_conv_unit(), &|l| l.macs)?,
        total_macs: total(&|_| true, &|l| l.macs)?,
        layers,
    })
}

/// `(baseline - value) / baseline` as a percentage string with two decimals,
/// rounded half away from zero using integer arithmetic only.
pub fn reduction_percent(baseline: u64, value: u64) -> String {
    if baseline == 0 {
        return "n/a".into();
    }
    let (b, v) = (baseline as i128, value as i128);
    let scaled = (b - v) * 10_000;
    let mut hundredths = (scaled.abs() * 2 + b) / (2 * b);
    let sign = if scaled < 0 && hundredths > 0 { "-" } else { "" };
    let whole = hundredths / 100;
    hundredths %= 100;
    format!("{sign}{whole}.{hundredths:02}%")
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,part,flavor,k,c_in,c_out,l,w,h,params,macs\n");
        for l in &self.layers {
            let dims = l.dims.map(|d| d.map(|v| v.to_string()).join(",")).unwrap_or_else(|| ",,,,,".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                l.name,
                l.kind,
                match l.part {
                    Part::Encoder => "encoder",
                    Part::Body => "body",
                },
                l.flavor.map(|f| f.to_string()).unwrap_or_default(),
                dims,
                l.params,
                l.macs
            );
        }
        out
    }
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComparisonRow {
    pub method: String,
    pub conv_params: u64,
    pub conv_reduction: Option<String>,
    pub total_params: u64,
    pub total_reduction: Option<String>,
}

/// Reports side by side, reductions taken against the first one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// `total` picks which total a report contributes (body or full).
    pub fn new(reports: &[(String, &CostReport)], total: impl Fn(&CostReport) -> u64) -> Self {
        let base = reports.first().map(|(_, r)| (r.conv_params, total(r)));
        let rows = reports
            .iter()
            .enumerate()
            .map(|(i, (method, r))| {
                let (bc, bt) = base.unwrap();
                ComparisonRow {
                    method: method.clone(),
                    conv_params: r.conv_params,
                    conv_reduction: (i > 0).then(|| reduction_percent(bc, r.conv_params)),
                    total_params: total(r),
                    total_reduction: (i > 0).then(|| reduction_percent(bt, total(r))),
                }
            })
            .collect();
        Self { rows }
    }

    const HEADER: [&'static str; 5] = ["method", "# param in conv layers", "reduced by", "# param total", "reduced by"];

    fn cells(&self) -> Vec<[String; 5]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    group_digits(r.conv_params),
                    r.conv_reduction.clone().unwrap_or_else(|| "-".into()),
                    group_digits(r.total_params),
                    r.total_reduction.clone().unwrap_or_else(|| "-".into()),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,conv_params,conv_reduced_by,total_params,total_reduced_by\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.method,
                r.conv_params,
                r.conv_reduction.clone().unwrap_or_default(),
                r.total_params,
                r.total_reduction.clone().unwrap_or_default()
            );
        }
        out
    }

    /// Column-aligned markdown table.
    pub fn to_markdown(&self) -> String {
        let cells = self.cells();
        let mut widths = Self::HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| {
            let body: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            format!("| {} |\n", body.join(" | "))
        };
        let mut out = line(&Self::HEADER.map(String::from));
        let rule: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(i, w)| if i == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) })
            .collect();
        let _ = writeln!(out, "| {} |", rule.join(" | "));
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}

/// `1234567` becomes `1,234,567`.
pub fn group_digits(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
