use rayon::prelude::*;

use super::geometry::{split5, volume, ConvGeometry, Window};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// One `k x k x k` filter per channel, shape `(c, k, k, k)`, plus a
/// per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseKernel<T = f64> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DepthwiseKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 || s[1] != s[2] || s[2] != s[3] || s[1] == 0 {
            return Err(Error::InvalidShape(format!(
                "depthwise kernel must be (c, k, k, k), got {s:?}"
            )));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::ShapeMismatch {
                op: "depthwise bias",
                left: vec![s[0]],
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn channels(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn k(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `(c_out, c_in)` channel-mixing matrix applied at every voxel, plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseKernel<T = f64> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> PointwiseKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "pointwise kernel must be (c_out, c_in), got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.dim(0)] {
            return Err(Error::ShapeMismatch {
                op: "pointwise bias",
                left: vec![weights.dim(0)],
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn c_in(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug)]
pub struct BiasedGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Valid output range `[lo, hi)` along one axis for tap offset `t`.
#[inline]
fn valid_range(input: usize, out: usize, stride: usize, pad: usize, t: usize) -> (usize, usize) {
    let lo = if pad > t { (pad - t).div_ceil(stride) } else { 0 };
    let hi = if input + pad > t { ((input + pad - t - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Calls `f(out_offset, in_offset, len)` for every output row segment of tap
/// `(i, j, l)`: outputs `out_offset..out_offset + len` read inputs
/// `in_offset + q * stride_w`.
#[inline]
fn for_each_tap_row(dims: [usize; 3], out: [usize; 3], win: &Window, tap: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let [_, h, w] = dims;
    let r: [(usize, usize); 3] =
        std::array::from_fn(|a| valid_range(dims[a], out[a], win.stride[a], win.pad[a], tap[a]));
    let (w_lo, w_hi) = r[2];
    if w_lo >= w_hi {
        return;
    }
    for od in r[0].0..r[0].1 {
        let id = od * win.stride[0] + tap[0] - win.pad[0];
        for oh in r[1].0..r[1].1 {
            let ih = oh * win.stride[1] + tap[1] - win.pad[1];
            let iw = w_lo * win.stride[2] + tap[2] - win.pad[2];
            f((od * out[1] + oh) * out[2] + w_lo, (id * h + ih) * w + iw, w_hi - w_lo);
        }
    }
}

/// `o[q] += wt * x[q * stride]` over a row segment.
#[inline]
fn axpy_row<T: Scalar>(o: &mut [T], x: &[T], stride: usize, wt: T) {
    if stride == 1 {
        for (a, &b) in o.iter_mut().zip(x) {
            *a += wt * b;
        }
    } else {
        for (q, a) in o.iter_mut().enumerate() {
            *a += wt * x[q * stride];
        }
    }
}

/// `x[q * stride] += wt * o[q]` over a row segment.
#[inline]
fn scatter_row<T: Scalar>(x: &mut [T], o: &[T], stride: usize, wt: T) {
    if stride == 1 {
        axpy_row(x, o, 1, wt);
    } else {
        for (q, &v) in o.iter().enumerate() {
            x[q * stride] += wt * v;
        }
    }
}

#[inline]
fn dot_row<T: Scalar>(o: &[T], x: &[T], stride: usize) -> T {
    if stride == 1 {
        o.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    } else {
        o.iter().enumerate().fold(T::zero(), |acc, (q, &a)| acc + a * x[q * stride])
    }
}

fn taps(k: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..k * k * k).map(move |t| [t / (k * k), (t / k) % k, t % k])
}

fn check_depthwise<T: Scalar>(input: &Tensor<T>, kernel: &DepthwiseKernel<T>, op: &'static str) -> Result<(usize, usize, [usize; 3])> {
    let (n, c, dims) = split5(input, op)?;
    if c != kernel.channels() {
        return Err(Error::ChannelMismatch {
            op,
            expected: kernel.channels(),
            got: c,
        });
    }
    Ok((n, c, dims))
}

/// Channel `m` of the output is channel `m` of the input convolved with
/// filter `m`, plus `bias[m]`.
pub fn depthwise3d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &DepthwiseKernel<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, c, dims) = check_depthwise(input, kernel, "depthwise3d")?;
    let k = kernel.k();
    let win = Window::cubic(k, geom);
    let od = win.output_dims(dims)?;
    let (p_in, p_out) = (volume(dims), volume(od));
    let mut out = Tensor::zeros(&[n, c, od[0], od[1], od[2]]);
    if p_out == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(p_out)
        .enumerate()
        .for_each(|(nc, o)| {
            let ch = nc % c;
            let x = &input.data()[nc * p_in..(nc + 1) * p_in];
            let filt = &kernel.weights.data()[ch * k * k * k..(ch + 1) * k * k * k];
            o.iter_mut().for_each(|v| *v = kernel.bias.data()[ch]);
            for (t, tap) in taps(k).enumerate() {
                let wt = filt[t];
                for_each_tap_row(dims, od, &win, tap, |oi, ii, len| {
                    axpy_row(&mut o[oi..oi + len], &x[ii..], win.stride[2], wt)
                });
            }
        });
    Ok(out)
}

pub fn depthwise3d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &DepthwiseKernel<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<BiasedGrads<T>> {
    let (n, c, dims) = check_depthwise(input, kernel, "depthwise3d_backward")?;
    let k = kernel.k();
    let kk = k * k * k;
    let win = Window::cubic(k, geom);
    let od = win.output_dims(dims)?;
    let expect = [n, c, od[0], od[1], od[2]];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "depthwise3d_backward",
            left: expect.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let (p_in, p_out) = (volume(dims), volume(od));

    let mut dx = Tensor::zeros(input.shape());
    if p_in > 0 {
        dx.data_mut()
            .par_chunks_mut(p_in)
            .enumerate()
            .for_each(|(nc, dxp)| {
                let ch = nc % c;
                let dy = &grad_out.data()[nc * p_out..(nc + 1) * p_out];
                let filt = &kernel.weights.data()[ch * kk..(ch + 1) * kk];
                for (t, tap) in taps(k).enumerate() {
                    let wt = filt[t];
                    for_each_tap_row(dims, od, &win, tap, |oi, ii, len| {
                        scatter_row(&mut dxp[ii..], &dy[oi..oi + len], win.stride[2], wt)
                    });
                }
            });
    }

    // Per-channel parameter grads, samples reduced in index order.
    let per_channel: Vec<(Vec<T>, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut dwc = vec![T::zero(); kk];
            let mut dbc = T::zero();
            for b in 0..n {
                let nc = b * c + ch;
                let dy = &grad_out.data()[nc * p_out..(nc + 1) * p_out];
                let x = &input.data()[nc * p_in..(nc + 1) * p_in];
                dbc += dy.iter().copied().sum::<T>();
                for (t, tap) in taps(k).enumerate() {
                    let mut acc = T::zero();
                    for_each_tap_row(dims, od, &win, tap, |oi, ii, len| {
                        acc += dot_row(&dy[oi..oi + len], &x[ii..], win.stride[2])
                    });
                    dwc[t] += acc;
                }
            }
            (dwc, dbc)
        })
        .collect();
    let mut dw = Vec::with_capacity(c * kk);
    let mut db = Vec::with_capacity(c);
    for (w, b) in per_channel {
        dw.extend(w);
        db.push(b);
    }
    Ok(BiasedGrads {
        input: dx,
        weights: Tensor::new(kernel.weights.shape(), dw)?,
        bias: Tensor::new(&[c], db)?,
    })
}

fn check_pointwise<T: Scalar>(input: &Tensor<T>, kernel: &PointwiseKernel<T>, op: &'static str) -> Result<(usize, usize, [usize; 3])> {
    let (n, c, dims) = split5(input, op)?;
    if c != kernel.c_in() {
        return Err(Error::ChannelMismatch {
            op,
            expected: kernel.c_in(),
            got: c,
        });
    }
    Ok((n, c, dims))
}

/// `out[:, voxel] = W * in[:, voxel] + bias` at every voxel.
pub fn pointwise_forward<T: Scalar>(input: &Tensor<T>, kernel: &PointwiseKernel<T>) -> Result<Tensor<T>> {
    let (n, c, dims) = check_pointwise(input, kernel, "pointwise")?;
    let c_out = kernel.c_out();
    let p = volume(dims);
    let mut out = Tensor::zeros(&[n, c_out, dims[0], dims[1], dims[2]]);
    if p == 0 || c_out == 0 {
        return Ok(out);
    }
    let wmat = MatRef::new(kernel.weights.data(), c_out, c);
    out.data_mut()
        .par_chunks_mut(c_out * p)
        .enumerate()
        .for_each(|(b, o)| {
            for (row, &bv) in o.chunks_mut(p).zip(kernel.bias.data()) {
                row.iter_mut().for_each(|v| *v = bv);
            }
            let x = MatRef::new(&input.data()[b * c * p..(b + 1) * c * p], c, p);
            gemm(T::one(), wmat, x, T::one(), o);
        });
    Ok(out)
}

pub fn pointwise_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &PointwiseKernel<T>,
    grad_out: &Tensor<T>,
) -> Result<BiasedGrads<T>> {
    let (n, c, dims) = check_pointwise(input, kernel, "pointwise_backward")?;
    let c_out = kernel.c_out();
    let p = volume(dims);
    let expect = [n, c_out, dims[0], dims[1], dims[2]];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "pointwise_backward",
            left: expect.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let wmat = MatRef::new(kernel.weights.data(), c_out, c);
    let mut dx = Tensor::zeros(input.shape());
    if c * p > 0 {
        dx.data_mut()
            .par_chunks_mut(c * p)
            .enumerate()
            .for_each(|(b, dxn)| {
                let dy = MatRef::new(&grad_out.data()[b * c_out * p..(b + 1) * c_out * p], c_out, p);
                gemm(T::one(), wmat.t(), dy, T::zero(), dxn);
            });
    }
    let mut dw = Tensor::zeros(kernel.weights.shape());
    let mut db = Tensor::zeros(&[c_out]);
    for b in 0..n {
        let dy_slice = &grad_out.data()[b * c_out * p..(b + 1) * c_out * p];
        let dy = MatRef::new(dy_slice, c_out, p);
        let x = MatRef::new(&input.data()[b * c * p..(b + 1) * c * p], c, p);
        gemm(T::one(), dy, x.t(), T::one(), dw.data_mut());
        for (o, row) in db.data_mut().iter_mut().zip(dy_slice.chunks(p.max(1))) {
            *o += row.iter().copied().sum::<T>();
        }
    }
    Ok(BiasedGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    #[test]
    fn counts_per_channel() {
        let mut x = Tensor::<f64>::zeros(&[1, 2, 3, 3, 3]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = if i < 27 { 1.0 } else { 2.0 };
        }
        let k = DepthwiseKernel::new(Tensor::full(&[2, 3, 3, 3], 1.0), Tensor::zeros(&[2])).unwrap();
        let y = depthwise3d_forward(&x, &k, ConvGeometry::valid()).unwrap();
        assert_eq!(y.data(), &[27.0, 54.0]);
    }

    #[test]
    fn bias_only() {
        let x = Tensor::<f64>::randn(&[2, 2, 4, 4, 4], Seed(3), 1.0);
        let k = DepthwiseKernel::new(Tensor::zeros(&[2, 3, 3, 3]), Tensor::new(&[2], vec![5.0, -1.0]).unwrap()).unwrap();
        let y = depthwise3d_forward(&x, &k, ConvGeometry::same(3)).unwrap();
        for b in 0..2 {
            for (ch, expect) in [(0, 5.0), (1, -1.0)] {
                let start = (b * 2 + ch) * 64;
                assert!(y.data()[start..start + 64].iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn pointwise_sums_and_identity() {
        let x = Tensor::new(&[1, 2, 1, 1, 1], vec![3.0, 4.5]).unwrap();
        let k = PointwiseKernel::new(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
        assert_eq!(pointwise_forward(&x, &k).unwrap().data(), &[7.5]);

        let x = Tensor::<f64>::randn(&[2, 3, 2, 3, 4], Seed(5), 1.0);
        let id = PointwiseKernel::new(Tensor::identity(3), Tensor::zeros(&[3])).unwrap();
        assert_eq!(pointwise_forward(&x, &id).unwrap(), x);
    }

    #[test]
    fn mismatched_channels() {
        let x = Tensor::<f64>::zeros(&[1, 3, 3, 3, 3]);
        let k = DepthwiseKernel::new(Tensor::zeros(&[2, 3, 3, 3]), Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            depthwise3d_forward(&x, &k, ConvGeometry::same(3)),
            Err(Error::ChannelMismatch { .. })
        ));
        let p = PointwiseKernel::new(Tensor::zeros(&[4, 2]), Tensor::zeros(&[4])).unwrap();
        assert!(pointwise_forward(&x, &p).is_err());
    }
}
