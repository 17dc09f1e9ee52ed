use super::activation::{ensure_finite, sigmoid_scalar};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over a batch of `(N, classes)` logits.
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.dim(0) != labels.len() || logits.dim(0) == 0 {
        return Err(Error::InvalidShape(format!(
            "softmax_cross_entropy: logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    ensure_finite(logits, "softmax_cross_entropy")?;
    let (n, classes) = (logits.dim(0), logits.dim(1));
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let nf = T::from_usize(n).unwrap();
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = T::zero();
    for (b, (row, g)) in logits
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .enumerate()
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        loss += log_denom + max - row[labels[b]];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - max).exp() / denom / nf;
        }
        g[labels[b]] -= T::one() / nf;
    }
    Ok((loss / nf, grad))
}

/// Mean voxel-wise binary cross-entropy on logits, computed in the stable
/// form `max(z, 0) - z * y + ln(1 + exp(-|z|))`. `target` must hold only 0
/// and 1.
pub fn voxel_bce<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if logits.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "voxel_bce",
            left: logits.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if logits.is_empty() {
        return Err(Error::InvalidShape("voxel_bce on an empty tensor".into()));
    }
    ensure_finite(logits, "voxel_bce")?;
    if target.data().iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::InvalidArgument("voxel_bce target must be binary".into()));
    }
    let m = T::from_usize(logits.len()).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(target.data()) {
        loss += z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid_scalar(z) - y) / m;
    }
    Ok((loss / m, grad))
}
