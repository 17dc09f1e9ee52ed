use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stride and symmetric zero padding shared by all three spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be positive".into()));
        }
        Ok(Self { stride, padding })
    }

    /// Stride 1 with `floor(k / 2)` padding, which keeps extents for odd `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn valid() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }

    /// `floor((input + 2 * padding - k) / stride) + 1`.
    pub fn output_extent(&self, input: usize, k: usize) -> Result<usize> {
        output_extent(input, k, self.stride, self.padding)
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::same(3)
    }
}

pub(crate) fn output_extent(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidGeometry(format!(
            "kernel {k} and stride {stride} must be positive"
        )));
    }
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::InvalidGeometry(format!(
            "kernel {k} does not fit input extent {input} with padding {padding}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Per-axis sliding window over a `(D, H, W)` volume. Anisotropic windows
/// back the `1 x k x k` and `k x 1 x 1` steps of the pseudo-3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Window {
    pub fn cubic(k: usize, geom: ConvGeometry) -> Self {
        Self {
            kernel: [k; 3],
            stride: [geom.stride; 3],
            pad: [geom.padding; 3],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = output_extent(input[a], self.kernel[a], self.stride[a], self.pad[a])?;
        }
        Ok(out)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Splits an `(N, C, D, H, W)` shape.
pub(crate) fn split5<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, [usize; 3])> {
    let s = t.shape();
    if s.len() != 5 {
        return Err(Error::InvalidShape(format!(
            "{op}: expected (N, C, D, H, W), got {s:?}"
        )));
    }
    Ok((s[0], s[1], [s[2], s[3], s[4]]))
}

pub(crate) fn volume(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_formula() {
        let g = ConvGeometry::new(2, 1).unwrap();
        assert_eq!(g.output_extent(8, 3).unwrap(), 4);
        assert_eq!(ConvGeometry::same(3).output_extent(5, 3).unwrap(), 5);
        assert_eq!(ConvGeometry::valid().output_extent(3, 3).unwrap(), 1);
        assert!(ConvGeometry::valid().output_extent(2, 3).is_err());
        assert!(ConvGeometry::new(0, 0).is_err());
    }

    #[test]
    fn extent_law_sweep() {
        for input in 1..10 {
            for k in 1..5 {
                for stride in 1..4 {
                    for padding in 0..3 {
                        let got = output_extent(input, k, stride, padding);
                        if input + 2 * padding < k {
                            assert!(got.is_err());
                        } else {
                            let expect = (input + 2 * padding - k) / stride + 1;
                            assert_eq!(got.unwrap(), expect);
                            // The last window start stays inside the padded input.
                            assert!((expect - 1) * stride + k <= input + 2 * padding);
                        }
                    }
                }
            }
        }
    }
}
