//! Standard and transposed 3D convolution lowered to GEMM through
//! `im2col` / `col2im`.
//!
//! Forward passes and input gradients are split over batch samples, which
//! write disjoint output slices. Weight gradients are accumulated
//! sample-by-sample in index order so results do not depend on the number of
//! worker threads.

use rayon::prelude::*;

use super::geometry::{split5, volume, ConvGeometry, Window};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Bias-free standard kernel of shape `(c_out, c_in, k, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StdKernel<T = f64> {
    pub weights: Tensor<T>,
}

impl<T: Scalar> StdKernel<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 5 || s[2] != s[3] || s[3] != s[4] || s[2] == 0 {
            return Err(Error::InvalidShape(format!(
                "standard kernel must be (c_out, c_in, k, k, k), got {s:?}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn k(&self) -> usize {
        self.weights.dim(2)
    }

    pub fn c_in(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// Gradients of a bias-free convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
}

/// Unfolds one `(c, D, H, W)` sample into a `(c * taps, out_volume)` matrix
/// whose rows start `ld` elements apart. Row order is `(channel, kd, kh, kw)`,
/// matching the weight layout.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    dims: [usize; 3],
    win: &Window,
    out: [usize; 3],
    col: &mut [T],
    ld: usize,
) {
    let [d, h, w] = dims;
    let [kd, kh, kw] = win.kernel;
    let [sd, sh, sw] = win.stride;
    let [pd, ph, pw] = win.pad;
    let p = volume(out);
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * d * h * w..(c + 1) * d * h * w];
        for i in 0..kd {
            for j in 0..kh {
                for l in 0..kw {
                    let dst = &mut col[row * ld..row * ld + p];
                    let mut q = 0;
                    for od in 0..out[0] {
                        let id = (od * sd + i) as isize - pd as isize;
                        for oh in 0..out[1] {
                            let ih = (oh * sh + j) as isize - ph as isize;
                            let seg = &mut dst[q..q + out[2]];
                            q += out[2];
                            if id < 0 || id >= d as isize || ih < 0 || ih >= h as isize {
                                seg.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let base = (id as usize * h + ih as usize) * w;
                            for (ow, v) in seg.iter_mut().enumerate() {
                                let iw = (ow * sw + l) as isize - pw as isize;
                                *v = if iw < 0 || iw >= w as isize {
                                    T::zero()
                                } else {
                                    plane[base + iw as usize]
                                };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into a sample.
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    dims: [usize; 3],
    win: &Window,
    out: [usize; 3],
    x: &mut [T],
    ld: usize,
) {
    let [d, h, w] = dims;
    let [kd, kh, kw] = win.kernel;
    let [sd, sh, sw] = win.stride;
    let [pd, ph, pw] = win.pad;
    let p = volume(out);
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for i in 0..kd {
            for j in 0..kh {
                for l in 0..kw {
                    let src = &col[row * ld..row * ld + p];
                    let mut q = 0;
                    for od in 0..out[0] {
                        let id = (od * sd + i) as isize - pd as isize;
                        for oh in 0..out[1] {
                            let ih = (oh * sh + j) as isize - ph as isize;
                            let seg = &src[q..q + out[2]];
                            q += out[2];
                            if id < 0 || id >= d as isize || ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let base = (id as usize * h + ih as usize) * w;
                            for (ow, &v) in seg.iter().enumerate() {
                                let iw = (ow * sw + l) as isize - pw as isize;
                                if iw >= 0 && iw < w as isize {
                                    plane[base + iw as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Largest column matrix, in elements, for which all samples of a batch are
/// unfolded side by side and multiplied in one GEMM.
const BATCHED_COLUMNS: usize = 1 << 23;

fn batched(rows: usize, n: usize, p: usize) -> bool {
    n > 1 && rows.saturating_mul(n).saturating_mul(p) <= BATCHED_COLUMNS
}

/// `(n, c, p)` to `(c, n * p)`.
fn pack<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut m = vec![T::zero(); n * c * p];
    for b in 0..n {
        for ch in 0..c {
            let dst = ch * n * p + b * p;
            m[dst..dst + p].copy_from_slice(&x[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
    m
}

/// `(c, n * p)` to `(n, c, p)`.
fn unpack<T: Scalar>(m: &[T], n: usize, c: usize, p: usize, x: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            let src = ch * n * p + b * p;
            x[(b * c + ch) * p..(b * c + ch + 1) * p].copy_from_slice(&m[src..src + p]);
        }
    }
}

/// All samples unfolded into one `(c * taps, n * out_volume)` matrix.
fn im2col_batch<T: Scalar>(x: &[T], n: usize, channels: usize, dims: [usize; 3], win: &Window, out: [usize; 3]) -> Vec<T> {
    let (p, in_len) = (volume(out), channels * volume(dims));
    let mut col = vec![T::zero(); channels * win.taps() * n * p];
    for b in 0..n {
        im2col(&x[b * in_len..(b + 1) * in_len], channels, dims, win, out, &mut col[b * p..], n * p);
    }
    col
}

fn check_weight<T: Scalar>(weight: &Tensor<T>, channels: usize, win: &Window, op: &'static str) -> Result<usize> {
    let s = weight.shape();
    if s.len() != 5 || s[2..] != win.kernel {
        return Err(Error::InvalidShape(format!(
            "{op}: weight {s:?} does not match window {:?}",
            win.kernel
        )));
    }
    if s[1] != channels {
        return Err(Error::ChannelMismatch {
            op,
            expected: s[1],
            got: channels,
        });
    }
    Ok(s[0])
}

/// Convolution with an arbitrary per-axis window. `weight` is
/// `(c_out, c_in, kd, kh, kw)`.
pub(crate) fn conv_window<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, win: &Window) -> Result<Tensor<T>> {
    let (n, c, dims) = split5(input, "conv3d")?;
    let c_out = check_weight(weight, c, win, "conv3d")?;
    let od = win.output_dims(dims)?;
    let p = volume(od);
    let rows = c * win.taps();
    let in_len = c * volume(dims);
    let mut out = Tensor::zeros(&[n, c_out, od[0], od[1], od[2]]);
    let wmat = MatRef::new(weight.data(), c_out, rows);
    if p == 0 || c_out == 0 {
        return Ok(out);
    }
    if batched(rows, n, p) {
        let col = if win.is_pointwise() {
            pack(input.data(), n, c, p)
        } else {
            im2col_batch(input.data(), n, c, dims, win, od)
        };
        let mut y = vec![T::zero(); c_out * n * p];
        gemm(T::one(), wmat, MatRef::new(&col, rows, n * p), T::zero(), &mut y);
        unpack(&y, n, c_out, p, out.data_mut());
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(c_out * p)
        .enumerate()
        .for_each(|(b, o)| {
            let x = &input.data()[b * in_len..(b + 1) * in_len];
            if win.is_pointwise() {
                gemm(T::one(), wmat, MatRef::new(x, c, p), T::zero(), o);
            } else {
                let mut col = vec![T::zero(); rows * p];
                im2col(x, c, dims, win, od, &mut col, p);
                gemm(T::one(), wmat, MatRef::new(&col, rows, p), T::zero(), o);
            }
        });
    Ok(out)
}

pub(crate) fn conv_window_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    win: &Window,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, c, dims) = split5(input, "conv3d_backward")?;
    let c_out = check_weight(weight, c, win, "conv3d_backward")?;
    let od = win.output_dims(dims)?;
    let expect = [n, c_out, od[0], od[1], od[2]];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv3d_backward",
            left: expect.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let p = volume(od);
    let rows = c * win.taps();
    let in_len = c * volume(dims);
    let wmat = MatRef::new(weight.data(), c_out, rows);

    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    if in_len > 0 && batched(rows, n, p) {
        let np = n * p;
        let dy = pack(grad_out.data(), n, c_out, p);
        let dy = MatRef::new(&dy, c_out, np);
        let col = if win.is_pointwise() {
            pack(input.data(), n, c, p)
        } else {
            im2col_batch(input.data(), n, c, dims, win, od)
        };
        let mut dcol = vec![T::zero(); rows * np];
        gemm(T::one(), wmat.t(), dy, T::zero(), &mut dcol);
        if win.is_pointwise() {
            unpack(&dcol, n, c, p, dx.data_mut());
        } else {
            for (b, dxn) in dx.data_mut().chunks_mut(in_len).enumerate() {
                col2im(&dcol[b * p..], c, dims, win, od, dxn, np);
            }
        }
        gemm(T::one(), dy, MatRef::new(&col, rows, np).t(), T::zero(), dw.data_mut());
        return Ok(ConvGrads {
            input: dx,
            weights: dw,
        });
    }
    if in_len > 0 {
        dx.data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .for_each(|(b, dxn)| {
                let dy = MatRef::new(&grad_out.data()[b * c_out * p..(b + 1) * c_out * p], c_out, p);
                if win.is_pointwise() {
                    gemm(T::one(), wmat.t(), dy, T::zero(), dxn);
                } else {
                    let mut dcol = vec![T::zero(); rows * p];
                    gemm(T::one(), wmat.t(), dy, T::zero(), &mut dcol);
                    col2im(&dcol, c, dims, win, od, dxn, p);
                }
            });
    }

    let mut col = if win.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * p]
    };
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let dy = MatRef::new(&grad_out.data()[b * c_out * p..(b + 1) * c_out * p], c_out, p);
        let cm = if win.is_pointwise() {
            MatRef::new(x, c, p)
        } else {
            im2col(x, c, dims, win, od, &mut col, p);
            MatRef::new(&col, rows, p)
        };
        gemm(T::one(), dy, cm.t(), T::one(), dw.data_mut());
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
    })
}

/// Standard 3D convolution
/// `G[n, o, x, y, z] = sum_{m, i, j, l} K[o, m, i, j, l] * F[n, m, x*s + i - p, ...]`
/// with zero padding.
pub fn conv3d_forward<T: Scalar>(input: &Tensor<T>, kernel: &StdKernel<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    conv_window(input, &kernel.weights, &Window::cubic(kernel.k(), geom))
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &StdKernel<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv_window_backward(input, &kernel.weights, &Window::cubic(kernel.k(), geom), grad_out)
}

fn transpose_window<T: Scalar>(weight: &Tensor<T>, stride: usize) -> Result<(usize, usize, Window)> {
    let s = weight.shape();
    if s.len() != 5 || s[2] != s[3] || s[3] != s[4] || s[2] == 0 {
        return Err(Error::InvalidShape(format!(
            "transposed kernel must be (c_in, c_out, k, k, k), got {s:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidGeometry("stride must be positive".into()));
    }
    let win = Window {
        kernel: [s[2]; 3],
        stride: [stride; 3],
        pad: [0; 3],
    };
    Ok((s[0], s[1], win))
}

/// Output extent of a transposed convolution: `(input - 1) * stride + k`.
pub fn convtranspose_extent(input: usize, k: usize, stride: usize) -> usize {
    if input == 0 {
        0
    } else {
        (input - 1) * stride + k
    }
}

/// Transposed 3D convolution, the adjoint of [`conv3d_forward`] with padding
/// 0. `weight` is `(c_in, c_out, k, k, k)`; no bias.
pub fn convtranspose3d_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (n, c, dims) = split5(input, "convtranspose3d")?;
    let (c_in, c_out, win) = transpose_window(weight, stride)?;
    if c != c_in {
        return Err(Error::ChannelMismatch {
            op: "convtranspose3d",
            expected: c_in,
            got: c,
        });
    }
    let k = win.kernel[0];
    let od = dims.map(|e| convtranspose_extent(e, k, stride));
    let p_in = volume(dims);
    let rows = c_out * win.taps();
    let out_len = c_out * volume(od);
    let mut out = Tensor::zeros(&[n, c_out, od[0], od[1], od[2]]);
    if out_len == 0 {
        return Ok(out);
    }
    let wmat = MatRef::new(weight.data(), c_in, rows);
    if batched(rows, n, p_in) {
        let np = n * p_in;
        let x = pack(input.data(), n, c_in, p_in);
        let mut col = vec![T::zero(); rows * np];
        gemm(T::one(), wmat.t(), MatRef::new(&x, c_in, np), T::zero(), &mut col);
        out.data_mut().par_chunks_mut(out_len).enumerate().for_each(|(b, o)| {
            col2im(&col[b * p_in..], c_out, od, &win, dims, o, np);
        });
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(b, o)| {
            let x = MatRef::new(&input.data()[b * c_in * p_in..(b + 1) * c_in * p_in], c_in, p_in);
            let mut col = vec![T::zero(); rows * p_in];
            gemm(T::one(), wmat.t(), x, T::zero(), &mut col);
            col2im(&col, c_out, od, &win, dims, o, p_in);
        });
    Ok(out)
}

pub fn convtranspose3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, c, dims) = split5(input, "convtranspose3d_backward")?;
    let (c_in, c_out, win) = transpose_window(weight, stride)?;
    if c != c_in {
        return Err(Error::ChannelMismatch {
            op: "convtranspose3d_backward",
            expected: c_in,
            got: c,
        });
    }
    let k = win.kernel[0];
    let od = dims.map(|e| convtranspose_extent(e, k, stride));
    let expect = [n, c_out, od[0], od[1], od[2]];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "convtranspose3d_backward",
            left: expect.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let p_in = volume(dims);
    let rows = c_out * win.taps();
    let out_len = c_out * volume(od);
    let wmat = MatRef::new(weight.data(), c_in, rows);

    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let in_len = c_in * p_in;
    if in_len > 0 && batched(rows, n, p_in) {
        let np = n * p_in;
        let col = im2col_batch(grad_out.data(), n, c_out, od, &win, dims);
        let col = MatRef::new(&col, rows, np);
        let mut dxm = vec![T::zero(); in_len * n];
        gemm(T::one(), wmat, col, T::zero(), &mut dxm);
        unpack(&dxm, n, c_in, p_in, dx.data_mut());
        let x = pack(input.data(), n, c_in, p_in);
        gemm(T::one(), MatRef::new(&x, c_in, np), col.t(), T::zero(), dw.data_mut());
        return Ok(ConvGrads {
            input: dx,
            weights: dw,
        });
    }
    if in_len > 0 {
        dx.data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .for_each(|(b, dxn)| {
                let mut col = vec![T::zero(); rows * p_in];
                im2col(&grad_out.data()[b * out_len..(b + 1) * out_len], c_out, od, &win, dims, &mut col, p_in);
                gemm(T::one(), wmat, MatRef::new(&col, rows, p_in), T::zero(), dxn);
            });
    }

    let mut col = vec![T::zero(); rows * p_in];
    for b in 0..n {
        im2col(&grad_out.data()[b * out_len..(b + 1) * out_len], c_out, od, &win, dims, &mut col, p_in);
        let x = MatRef::new(&input.data()[b * in_len..(b + 1) * in_len], c_in, p_in);
        gemm(T::one(), x, MatRef::new(&col, rows, p_in).t(), T::one(), dw.data_mut());
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
    })
}
