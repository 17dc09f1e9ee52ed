use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::Param;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl OptimizerKind {
    pub const ADAM: Self = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    pub const SGD: Self = OptimizerKind::Sgd { momentum: 0.9 };
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::ADAM
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::ADAM),
            "sgd" => Ok(Self::SGD),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam { .. } => f.write_str("adam"),
            OptimizerKind::Sgd { .. } => f.write_str("sgd"),
        }
    }
}

/// Per-parameter moment buffers, matched to parameters by position.
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    steps: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every trainable parameter from its accumulated gradient.
    /// A zero learning rate leaves parameters untouched.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and nonnegative, got {lr}")));
        }
        let trainable: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.trainable).collect();
        if self.moments.is_empty() {
            self.moments = trainable.iter().map(|p| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()))).collect();
        }
        if self.moments.len() != trainable.len() {
            return Err(Error::InvalidArgument("parameter set changed between optimizer steps".into()));
        }
        self.steps += 1;
        if lr == 0.0 {
            return Ok(());
        }
        let t = self.steps as i32;
        for (p, (m, v)) in trainable.into_iter().zip(&mut self.moments) {
            if m.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer step",
                    left: m.shape().to_vec(),
                    right: p.value.shape().to_vec(),
                });
            }
            let g = p.grad.data();
            let w = p.value.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                    let step = T::from_f64_lossy(lr / c1);
                    let (inv_c2, eps) = (T::from_f64_lossy(1.0 / c2), T::from_f64_lossy(eps));
                    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    let mu = T::from_f64_lossy(momentum);
                    let lr = T::from_f64_lossy(lr);
                    for ((w, &g), m) in w.iter_mut().zip(g).zip(m.data_mut()) {
                        *m = mu * *m + g;
                        *w -= lr * *m;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate given as `(epochs, lr)` spans.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub spans: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(epochs: usize, lr: f64) -> Self {
        Self {
            spans: vec![(epochs, lr)],
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.spans.iter().map(|s| s.0).sum()
    }

    /// Learning rate of a zero-based epoch; past the end the last rate holds.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for &(span, lr) in &self.spans {
            end += span;
            if epoch < end {
                return lr;
            }
        }
        self.spans.last().map_or(0.0, |s| s.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spans.is_empty() || self.spans.iter().any(|&(n, lr)| n == 0 || !(lr.is_finite() && lr >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid learning-rate schedule {:?}", self.spans)));
        }
        Ok(())
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    /// `"10:1e-5,10:1e-6"`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("schedule must look like `10:1e-5,10:1e-6`, got `{s}`"));
        let spans = s
            .split(',')
            .map(|part| {
                let (n, lr) = part.trim().split_once(':').ok_or_else(bad)?;
                Ok((n.trim().parse().map_err(|_| bad())?, lr.trim().parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;
        let sched = Self { spans };
        sched.validate()?;
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    #[test]
    fn schedule_lookup() {
        let s: LrSchedule = "10:1e-5,10:1e-6".parse().unwrap();
        assert_eq!(s.total_epochs(), 20);
        assert_eq!(s.lr_at(0), 1e-5);
        assert_eq!(s.lr_at(9), 1e-5);
        assert_eq!(s.lr_at(10), 1e-6);
        assert_eq!(s.lr_at(25), 1e-6);
        assert!("10".parse::<LrSchedule>().is_err());
        assert!("0:1e-3".parse::<LrSchedule>().is_err());
    }

    #[test]
    fn zero_lr_is_bitwise_noop() {
        for kind in [OptimizerKind::ADAM, OptimizerKind::SGD] {
            let mut p = Param::new("w", Tensor::<f32>::randn(&[5], Seed(1), 1.0));
            p.grad = Tensor::randn(&[5], Seed(2), 1.0);
            let before = p.value.clone();
            let mut opt = Optimizer::new(kind);
            opt.step(vec![&mut p], 0.0).unwrap();
            assert_eq!(p.value, before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new("w", Tensor::<f64>::zeros(&[3]));
        p.grad = Tensor::new(&[3], vec![2.0, -0.5, 1e-3]).unwrap();
        Optimizer::new(OptimizerKind::ADAM).step(vec![&mut p], 0.1).unwrap();
        for (w, g) in p.value.data().iter().zip(p.grad.data()) {
            assert!((w + 0.1 * g.signum()).abs() < 1e-5, "{w}");
        }
    }

    #[test]
    fn buffers_are_skipped() {
        let mut b = Param::buffer("running_mean", Tensor::<f64>::full(&[2], 3.0));
        let mut w = Param::new("w", Tensor::<f64>::zeros(&[2]));
        w.grad.fill(1.0);
        Optimizer::new(OptimizerKind::SGD).step(vec![&mut b, &mut w], 0.5).unwrap();
        assert_eq!(b.value.data(), &[3.0, 3.0]);
        assert_eq!(w.value.data(), &[-0.5, -0.5]);
    }
}
