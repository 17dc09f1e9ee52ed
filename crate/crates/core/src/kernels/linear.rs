use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if input.rank() != 2 || weights.rank() != 2 || bias.shape() != [weights.dim(0)] {
        return Err(Error::InvalidShape(format!(
            "fully_connected: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    if input.dim(1) != weights.dim(1) {
        return Err(Error::ChannelMismatch {
            op: "fully_connected",
            expected: weights.dim(1),
            got: input.dim(1),
        });
    }
    Ok((input.dim(0), weights.dim(1), weights.dim(0)))
}

/// `y = x W^T + b` for `x: (N, in)`, `W: (out, in)`, `b: (out)`.
pub fn fully_connected<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, m) = check(input, weights, bias)?;
    let mut out = Tensor::from_fn(&[n, m], |i| bias.data()[i % m.max(1)]);
    gemm(
        T::one(),
        MatRef::new(input.data(), n, k),
        MatRef::new(weights.data(), m, k).t(),
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, k, m) = check(input, weights, bias)?;
    if grad_out.shape() != [n, m] {
        return Err(Error::ShapeMismatch {
            op: "fully_connected_backward",
            left: vec![n, m],
            right: grad_out.shape().to_vec(),
        });
    }
    let dy = MatRef::new(grad_out.data(), n, m);
    let mut dx = Tensor::zeros(&[n, k]);
    gemm(T::one(), dy, MatRef::new(weights.data(), m, k), T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[m, k]);
    gemm(T::one(), dy.t(), MatRef::new(input.data(), n, k), T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[m]);
    for row in grad_out.data().chunks(m.max(1)) {
        for (o, &g) in db.data_mut().iter_mut().zip(row) {
            *o += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        assert_eq!(fully_connected(&x, &w, &b).unwrap().data(), &[1.5, 2.0]);
        assert!(fully_connected(&Tensor::zeros(&[1, 3]), &w, &b).is_err());
    }
}
