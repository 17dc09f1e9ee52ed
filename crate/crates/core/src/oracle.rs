//! Brute-force reference kernels and numerical checkers.
//!
//! Everything here is a literal nested-loop evaluation of the convolution
//! sums and deliberately shares no code with [`crate::kernels`]; the only
//! common piece is the `Tensor` container. Inputs are limited to tiny shapes
//! so these routines cannot end up on a hot path.
//!
//! Each routine counts one multiply per kernel tap per output element,
//! including taps that land in the zero padding, which is the quantity the
//! closed-form cost model predicts.

use crate::error::{Error, Result};
use crate::netgraph::ConvFlavor;
use crate::tensor::Tensor;

pub const MAX_EXTENT: usize = 8;
pub const MAX_CHANNELS: usize = 8;

/// Multiplies below this magnitude are compared absolutely in
/// [`relative_error`].
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Counts kernel multiplies performed by one oracle call.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct MacCounter {
    count: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn reset(&mut self) {
        self.count = 0;
    }

    #[inline]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.count += 1;
        a * b
    }
}

fn guard(what: &str, shape: &[usize], channel_axes: &[usize], spatial_axes: &[usize]) -> Result<()> {
    for &a in channel_axes {
        if shape[a] > MAX_CHANNELS {
            return Err(Error::OracleTooLarge(format!("{what}: {shape:?} has more than {MAX_CHANNELS} channels")));
        }
    }
    for &a in spatial_axes {
        if shape[a] > MAX_EXTENT {
            return Err(Error::OracleTooLarge(format!("{what}: {shape:?} exceeds extent {MAX_EXTENT}")));
        }
    }
    Ok(())
}

fn rank5(what: &str, t: &Tensor) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::InvalidShape(format!("{what}: expected rank 5, got {:?}", t.shape())))
}

fn extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || k == 0 || input + 2 * pad < k {
        return Err(Error::InvalidGeometry(format!("oracle: k={k} stride={stride} pad={pad} on extent {input}")));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Zero-padded read.
fn read(x: &Tensor, b: usize, c: usize, z: isize, y: isize, w: isize) -> f64 {
    let s = x.shape();
    if z < 0 || y < 0 || w < 0 || z >= s[2] as isize || y >= s[3] as isize || w >= s[4] as isize {
        0.0
    } else {
        x.at(&[b, c, z as usize, y as usize, w as usize])
    }
}

/// `G[b, n, x, y, z] = sum_{m, i, j, l} K[n, m, i, j, l] F[b, m, x s + i - p, ...]`
/// for a `(c_out, c_in, kd, kh, kw)` kernel; stride and padding are per axis.
pub fn naive_conv3d(
    input: &Tensor,
    kernel: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let [nb, ci, d, h, w] = rank5("naive_conv3d input", input)?;
    let [co, kci, kd, kh, kw] = rank5("naive_conv3d kernel", kernel)?;
    guard("naive_conv3d", input.shape(), &[1], &[2, 3, 4])?;
    guard("naive_conv3d", kernel.shape(), &[0, 1], &[])?;
    if kci != ci {
        return Err(Error::ChannelMismatch {
            op: "naive_conv3d",
            expected: kci,
            got: ci,
        });
    }
    let od = extent(d, kd, stride[0], pad[0])?;
    let oh = extent(h, kh, stride[1], pad[1])?;
    let ow = extent(w, kw, stride[2], pad[2])?;
    let mut out = Tensor::zeros(&[nb, co, od, oh, ow]);
    for b in 0..nb {
        for n in 0..co {
            for x in 0..od {
                for y in 0..oh {
                    for z in 0..ow {
                        let mut acc = 0.0;
                        for m in 0..ci {
                            for i in 0..kd {
                                for j in 0..kh {
                                    for l in 0..kw {
                                        let fz = (x * stride[0] + i) as isize - pad[0] as isize;
                                        let fy = (y * stride[1] + j) as isize - pad[1] as isize;
                                        let fx = (z * stride[2] + l) as isize - pad[2] as isize;
                                        acc += counter.mul(kernel.at(&[n, m, i, j, l]), read(input, b, m, fz, fy, fx));
                                    }
                                }
                            }
                        }
                        *out.at_mut(&[b, n, x, y, z]) = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `G[b, m, x, y, z] = bias[m] + sum_{i, j, l} K[m, i, j, l] F[b, m, ...]`.
pub fn naive_depthwise(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let [nb, c, d, h, w] = rank5("naive_depthwise input", input)?;
    guard("naive_depthwise", input.shape(), &[1], &[2, 3, 4])?;
    let ks = kernel.shape();
    if ks.len() != 4 || ks[0] != c || bias.shape() != [c] {
        return Err(Error::InvalidShape(format!("naive_depthwise: kernel {ks:?} for {c} channels")));
    }
    let k = ks[1];
    let (od, oh, ow) = (extent(d, k, stride, pad)?, extent(h, k, stride, pad)?, extent(w, k, stride, pad)?);
    let mut out = Tensor::zeros(&[nb, c, od, oh, ow]);
    for b in 0..nb {
        for m in 0..c {
            for x in 0..od {
                for y in 0..oh {
                    for z in 0..ow {
                        let mut acc = bias.at(&[m]);
                        for i in 0..k {
                            for j in 0..k {
                                for l in 0..k {
                                    let fz = (x * stride + i) as isize - pad as isize;
                                    let fy = (y * stride + j) as isize - pad as isize;
                                    let fx = (z * stride + l) as isize - pad as isize;
                                    acc += counter.mul(kernel.at(&[m, i, j, l]), read(input, b, m, fz, fy, fx));
                                }
                            }
                        }
                        *out.at_mut(&[b, m, x, y, z]) = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `G[b, n, v] = bias[n] + sum_m W[n, m] F[b, m, v]` at every voxel `v`.
pub fn naive_pointwise(input: &Tensor, weights: &Tensor, bias: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
    let [nb, ci, d, h, w] = rank5("naive_pointwise input", input)?;
    guard("naive_pointwise", input.shape(), &[1], &[2, 3, 4])?;
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != ci || bias.shape() != [ws[0]] {
        return Err(Error::InvalidShape(format!("naive_pointwise: weights {ws:?} for {ci} channels")));
    }
    let co = ws[0];
    let mut out = Tensor::zeros(&[nb, co, d, h, w]);
    for b in 0..nb {
        for n in 0..co {
            for x in 0..d {
                for y in 0..h {
                    for z in 0..w {
                        let mut acc = bias.at(&[n]);
                        for m in 0..ci {
                            acc += counter.mul(weights.at(&[n, m]), input.at(&[b, m, x, y, z]));
                        }
                        *out.at_mut(&[b, n, x, y, z]) = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pseudo-3D convolution as two literal sums, no normalization or
/// activation in between:
///
/// * horizontal: `H[b, n, x, y, z] = sum_{m, j, l} Kh[n, m, 0, j, l] F[b, m, x, y s + j - p, z s + l - p]`
/// * vertical: `G[b, n, x, y, z] = sum_{m, i} Kv[n, m, i, 0, 0] H[b, m, x s + i - p, y, z]`
pub fn naive_pseudo(
    input: &Tensor,
    horizontal: &Tensor,
    vertical: &Tensor,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let [nb, ci, d, h, w] = rank5("naive_pseudo input", input)?;
    guard("naive_pseudo", input.shape(), &[1], &[2, 3, 4])?;
    let [hc_out, hc_in, one, k, k2] = rank5("naive_pseudo horizontal", horizontal)?;
    let [co, vc_in, vk, v1, v2] = rank5("naive_pseudo vertical", vertical)?;
    guard("naive_pseudo", vertical.shape(), &[0], &[])?;
    if hc_in != ci || hc_out != ci || one != 1 || k != k2 || vc_in != ci || vk != k || v1 != 1 || v2 != 1 {
        return Err(Error::InvalidShape(format!(
            "naive_pseudo: kernels {:?} / {:?} for {ci} channels",
            horizontal.shape(),
            vertical.shape()
        )));
    }
    let (hh, hw) = (extent(h, k, stride, pad)?, extent(w, k, stride, pad)?);
    let mut mid = Tensor::zeros(&[nb, ci, d, hh, hw]);
    for b in 0..nb {
        for n in 0..ci {
            for x in 0..d {
                for y in 0..hh {
                    for z in 0..hw {
                        let mut acc = 0.0;
                        for m in 0..ci {
                            for j in 0..k {
                                for l in 0..k {
                                    let fy = (y * stride + j) as isize - pad as isize;
                                    let fx = (z * stride + l) as isize - pad as isize;
                                    acc += counter.mul(horizontal.at(&[n, m, 0, j, l]), read(input, b, m, x as isize, fy, fx));
                                }
                            }
                        }
                        *mid.at_mut(&[b, n, x, y, z]) = acc;
                    }
                }
            }
        }
    }
    let od = extent(d, k, stride, pad)?;
    let mut out = Tensor::zeros(&[nb, co, od, hh, hw]);
    for b in 0..nb {
        for n in 0..co {
            for x in 0..od {
                for y in 0..hh {
                    for z in 0..hw {
                        let mut acc = 0.0;
                        for m in 0..ci {
                            for i in 0..k {
                                let fz = (x * stride + i) as isize - pad as isize;
                                acc += counter.mul(vertical.at(&[n, m, i, 0, 0]), read(&mid, b, m, fz, y as isize, z as isize));
                            }
                        }
                        *out.at_mut(&[b, n, x, y, z]) = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution as a scatter:
/// `G[b, n, x s + i, y s + j, z s + l] += K[m, n, i, j, l] F[b, m, x, y, z]`.
pub fn naive_convtranspose(input: &Tensor, kernel: &Tensor, stride: usize, counter: &mut MacCounter) -> Result<Tensor> {
    let [nb, ci, d, h, w] = rank5("naive_convtranspose input", input)?;
    guard("naive_convtranspose", input.shape(), &[1], &[2, 3, 4])?;
    let [kci, co, k, _, _] = rank5("naive_convtranspose kernel", kernel)?;
    guard("naive_convtranspose", kernel.shape(), &[1], &[])?;
    if kci != ci || stride == 0 {
        return Err(Error::InvalidShape(format!("naive_convtranspose: kernel {:?} for {ci} channels", kernel.shape())));
    }
    let grow = |e: usize| if e == 0 { 0 } else { (e - 1) * stride + k };
    let mut out = Tensor::zeros(&[nb, co, grow(d), grow(h), grow(w)]);
    for b in 0..nb {
        for m in 0..ci {
            for x in 0..d {
                for y in 0..h {
                    for z in 0..w {
                        let v = input.at(&[b, m, x, y, z]);
                        for n in 0..co {
                            for i in 0..k {
                                for j in 0..k {
                                    for l in 0..k {
                                        let p = counter.mul(kernel.at(&[m, n, i, j, l]), v);
                                        *out.at_mut(&[b, n, x * stride + i, y * stride + j, z * stride + l]) += p;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Copy of `x` with `before[a]` zeros ahead of and `after[a]` zeros behind
/// spatial axis `a`.
fn zero_padded(x: &Tensor, before: [usize; 3], after: [usize; 3]) -> Tensor {
    let s = x.shape();
    let out = [s[0], s[1], s[2] + before[0] + after[0], s[3] + before[1] + after[1], s[4] + before[2] + after[2]];
    let mut y = Tensor::zeros(&out);
    for b in 0..s[0] {
        for c in 0..s[1] {
            for z in 0..s[2] {
                for r in 0..s[3] {
                    for w in 0..s[4] {
                        *y.at_mut(&[b, c, z + before[0], r + before[1], w + before[2]]) = x.at(&[b, c, z, r, w]);
                    }
                }
            }
        }
    }
    y
}

/// Multiplies the oracles perform for one layer of `flavor` mapping `c_f`
/// channels of extent `dims` to `c_g` channels of the same extent. Padding is
/// zero and extent-preserving; an even `k` gets one more zero behind than
/// ahead. The pseudo-3D steps are each padded along their own axes only.
pub fn instrumented_macs(flavor: ConvFlavor, k: usize, c_f: usize, c_g: usize, dims: [usize; 3]) -> Result<u64> {
    if k == 0 || c_f == 0 || c_g == 0 || dims.contains(&0) {
        return Err(Error::InvalidArgument("instrumented_macs: arguments must be positive".into()));
    }
    let (b, a) = ((k - 1) / 2, k - 1 - (k - 1) / 2);
    let x = Tensor::zeros(&[1, c_f, dims[0], dims[1], dims[2]]);
    let mut ctr = MacCounter::new();
    match flavor {
        ConvFlavor::Standard => {
            naive_conv3d(&zero_padded(&x, [b; 3], [a; 3]), &Tensor::zeros(&[c_g, c_f, k, k, k]), [1; 3], [0; 3], &mut ctr)?;
        }
        ConvFlavor::Depthwise => {
            let padded = zero_padded(&x, [b; 3], [a; 3]);
            let h = naive_depthwise(&padded, &Tensor::zeros(&[c_f, k, k, k]), &Tensor::zeros(&[c_f]), 1, 0, &mut ctr)?;
            naive_pointwise(&h, &Tensor::zeros(&[c_g, c_f]), &Tensor::zeros(&[c_g]), &mut ctr)?;
        }
        ConvFlavor::Pseudo => {
            let hx = zero_padded(&x, [0, b, b], [0, a, a]);
            let mid = naive_conv3d(&hx, &Tensor::zeros(&[c_f, c_f, 1, k, k]), [1; 3], [0; 3], &mut ctr)?;
            let vx = zero_padded(&mid, [b, 0, 0], [a, 0, 0]);
            naive_conv3d(&vx, &Tensor::zeros(&[c_g, c_f, k, 1, 1]), [1; 3], [0; 3], &mut ctr)?;
        }
    }
    Ok(ctr.count())
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every
/// coordinate of `params`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad"));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}
