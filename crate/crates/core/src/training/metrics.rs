use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::voxio::VoxelGrid;

pub const SWEEP_THRESHOLDS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {t}")))
    }
}

/// `|{p > t} and y| / |{p > t} or y|` with truth voxels `y > 0.5`. Both sets
/// empty counts as a perfect match (1.0).
pub fn iou<T: Scalar>(pred: &[T], truth: &[T], t: f64) -> Result<f64> {
    check_threshold(t)?;
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "iou",
            left: vec![pred.len()],
            right: vec![truth.len()],
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, y) in pred.iter().zip(truth) {
        let a = p.as_f64() > t;
        let b = y.as_f64() > 0.5;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn miou(pred: &VoxelGrid, truth: &VoxelGrid, t: f64) -> Result<f64> {
    if pred.resolution() != truth.resolution() {
        return Err(Error::ShapeMismatch {
            op: "miou",
            left: vec![pred.resolution(); 3],
            right: vec![truth.resolution(); 3],
        });
    }
    iou(pred.values(), truth.values(), t)
}

/// Per-threshold scores and the best one (earliest threshold wins ties).
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub entries: Vec<(f64, f64)>,
    pub best: (f64, f64),
}

impl Sweep {
    fn from_entries(entries: Vec<(f64, f64)>) -> Self {
        let best = entries.iter().copied().fold(entries[0], |b, e| if e.1 > b.1 { e } else { b });
        Self { entries, best }
    }

    pub fn best_threshold(&self) -> f64 {
        self.best.0
    }
}

pub fn threshold_sweep(pred: &VoxelGrid, truth: &VoxelGrid, thresholds: &[f64]) -> Result<Sweep> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold set".into()));
    }
    let entries = thresholds.iter().map(|&t| Ok((t, miou(pred, truth, t)?))).collect::<Result<Vec<_>>>()?;
    Ok(Sweep::from_entries(entries))
}

/// Mean of per-class means: each class present in `labels` weighs the same.
pub fn class_mean(values: &[f64], labels: &[usize]) -> Result<(f64, Vec<(usize, f64)>)> {
    if values.len() != labels.len() || values.is_empty() {
        return Err(Error::InvalidArgument(format!("{} values for {} labels", values.len(), labels.len())));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut sums = vec![(0.0, 0usize); classes];
    for (&v, &l) in values.iter().zip(labels) {
        sums[l].0 += v;
        sums[l].1 += 1;
    }
    let per_class: Vec<(usize, f64)> =
        sums.iter().enumerate().filter(|(_, s)| s.1 > 0).map(|(c, s)| (c, s.0 / s.1 as f64)).collect();
    let mean = per_class.iter().map(|p| p.1).sum::<f64>() / per_class.len() as f64;
    Ok((mean, per_class))
}

/// Class-uniform mean IoU of a batch at every threshold.
pub fn threshold_sweep_batch(
    preds: &[VoxelGrid],
    truths: &[VoxelGrid],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<(Sweep, Vec<Vec<(usize, f64)>>)> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold set".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} targets", preds.len(), truths.len())));
    }
    let mut entries = Vec::new();
    let mut per_class = Vec::new();
    for &t in thresholds {
        let scores = preds.iter().zip(truths).map(|(p, y)| miou(p, y, t)).collect::<Result<Vec<_>>>()?;
        let (mean, classes) = class_mean(&scores, labels)?;
        entries.push((t, mean));
        per_class.push(classes);
    }
    Ok((Sweep::from_entries(entries), per_class))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `(N, C)` logits whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.dim(0) != labels.len() || labels.is_empty() {
        return Err(Error::InvalidShape(format!("accuracy: logits {:?} with {} labels", logits.shape(), labels.len())));
    }
    let c = logits.dim(1);
    let hits = logits.data().chunks(c).zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
