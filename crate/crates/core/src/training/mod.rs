//! Optimizers, schedules, the classification and reconstruction loops, and
//! their metrics.

pub mod metrics;
pub mod optim;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

pub use metrics::{accuracy, argmax, class_mean, iou, miou, threshold_sweep, threshold_sweep_batch, Sweep, SWEEP_THRESHOLDS};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::kernels::{sigmoid, softmax_cross_entropy, voxel_bce, Mode};
use crate::netgraph::Model;
use crate::tensor::{DType, Scalar, Seed, Tensor};
use crate::voxio::{stack_grids, Dataset, VoxelGrid};

/// Threshold at which reconstruction training reports its epoch metric.
pub const TRAIN_THRESHOLD: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: Seed,
    pub dtype: DType,
    pub shuffle: bool,
    /// Stop early once an epoch's metric reaches this value.
    pub stop_at: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, batch_size: usize) -> Self {
        Self {
            epochs,
            schedule: LrSchedule::constant(epochs, lr),
            batch_size,
            optimizer: OptimizerKind::ADAM,
            seed: Seed(0),
            dtype: DType::F32,
            shuffle: true,
            stop_at: None,
        }
    }

    /// 20 epochs: 10 at 1e-5 then 10 at 1e-6.
    pub fn paper_classification() -> Self {
        Self {
            schedule: LrSchedule {
                spans: vec![(10, 1e-5), (10, 1e-6)],
            },
            ..Self::new(20, 1e-5, 8)
        }
    }

    /// 120 epochs: 60 at 1e-6 then 60 at 1e-7, batches of 32.
    pub fn paper_reconstruction() -> Self {
        Self {
            schedule: LrSchedule {
                spans: vec![(60, 1e-6), (60, 1e-7)],
            },
            ..Self::new(120, 1e-6, 32)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.schedule.total_epochs() != self.epochs {
            return Err(Error::InvalidArgument(format!(
                "schedule covers {} epochs but training runs {}",
                self.schedule.total_epochs(),
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }

    fn check_dtype<T: Scalar>(&self) -> Result<()> {
        if T::DTYPE != self.dtype {
            return Err(Error::InvalidArgument(format!("config asks for {:?} but the model is {:?}", self.dtype, T::DTYPE)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,metric\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{},{}", r.epoch, r.lr, r.loss, r.metric);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResult {
    /// Class-uniform mean of per-class accuracies.
    pub accuracy: Option<f64>,
    /// Class-uniform mean IoU at the best threshold.
    pub miou: Option<f64>,
    pub sweep: Option<Sweep>,
    /// Per-class accuracy or per-class IoU at the best threshold.
    pub per_class: Vec<(usize, f64)>,
}

/// Index batches for one epoch. A trailing batch of one sample is merged
/// into its predecessor so batch statistics stay defined.
fn epoch_batches(n: usize, batch: usize, shuffle: bool, seed: Seed) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut seed.rng());
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    }
}

fn gather_rows<T: Scalar>(latents: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<T>> {
    let dim = latents.dim(1);
    let mut data = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        data.extend(latents.data()[i * dim..(i + 1) * dim].iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Tensor::new(&[idx.len(), dim], data)
}

struct Loop<'a, T: Scalar> {
    model: &'a mut Model<T>,
    config: &'a TrainConfig,
    optimizer: Optimizer<T>,
}

impl<'a, T: Scalar> Loop<'a, T> {
    fn new(model: &'a mut Model<T>, data: &Dataset, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        config.check_dtype::<T>()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        Ok(Self {
            model,
            config,
            optimizer: Optimizer::new(config.optimizer),
        })
    }

    /// Runs every epoch; `step` returns the batch loss and a per-sample
    /// metric contribution summed over the batch.
    fn run(
        &mut self,
        n: usize,
        mut step: impl FnMut(&mut Model<T>, &[usize]) -> Result<(f64, f64)>,
        mut observe: impl FnMut(&EpochRecord, &mut Model<T>) -> Result<bool>,
    ) -> Result<History> {
        let mut history = History::default();
        for epoch in 0..self.config.epochs {
            let lr = self.config.schedule.lr_at(epoch);
            let (mut loss_sum, mut metric_sum) = (0.0, 0.0);
            for idx in epoch_batches(n, self.config.batch_size, self.config.shuffle, self.config.seed.derive(epoch as u64)) {
                self.model.zero_grad();
                let (loss, metric) = step(self.model, &idx).map_err(|e| diverged(epoch + 1, e))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch: epoch + 1, loss });
                }
                self.optimizer.step(self.model.parameters_mut(), lr)?;
                loss_sum += loss * idx.len() as f64;
                metric_sum += metric;
            }
            let record = EpochRecord {
                epoch: epoch + 1,
                lr,
                loss: loss_sum / n as f64,
                metric: metric_sum / n as f64,
            };
            history.records.push(record);
            let stop = observe(&record, self.model)?;
            if stop || self.config.stop_at.map_or(false, |target| record.metric >= target) {
                break;
            }
        }
        Ok(history)
    }
}

/// Trains on voxel grids with labels. The epoch metric is accuracy of the
/// training-mode predictions.
pub fn train_classifier<T: Scalar>(model: &mut Model<T>, data: &Dataset, config: &TrainConfig) -> Result<History> {
    train_classifier_observed(model, data, config, |_, _| Ok(false))
}

/// Like [`train_classifier`], calling `observe` after every epoch with the
/// model; training stops early when it returns `true`.
pub fn train_classifier_observed<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    config: &TrainConfig,
    observe: impl FnMut(&EpochRecord, &mut Model<T>) -> Result<bool>,
) -> Result<History> {
    let mut run = Loop::new(model, data, config)?;
    run.run(
        data.len(),
        |model, idx| {
            let x = stack_grids::<T>(idx.iter().map(|&i| &data.voxels[i]))?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let logits = model.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&grad)?;
            Ok((loss.as_f64(), accuracy(&logits, &labels)? * idx.len() as f64))
        },
        observe,
    )
}

/// Trains the decoder to map latents to occupancy. The epoch metric is the
/// mean IoU at threshold 0.3 of the training-mode predictions.
pub fn train_reconstructor<T: Scalar>(model: &mut Model<T>, data: &Dataset, config: &TrainConfig) -> Result<History> {
    train_reconstructor_observed(model, data, config, |_, _| Ok(false))
}

/// Like [`train_reconstructor`], with the same per-epoch hook as
/// [`train_classifier_observed`].
pub fn train_reconstructor_observed<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    config: &TrainConfig,
    observe: impl FnMut(&EpochRecord, &mut Model<T>) -> Result<bool>,
) -> Result<History> {
    let mut run = Loop::new(model, data, config)?;
    run.run(
        data.len(),
        |model, idx| {
            let z = gather_rows::<T>(&data.latents, idx)?;
            let y = stack_grids::<T>(idx.iter().map(|&i| &data.voxels[i]))?;
            let logits = model.forward(&z, Mode::Train)?;
            let (loss, grad) = voxel_bce(&logits, &y)?;
            model.backward(&grad)?;
            let p = sigmoid(&logits);
            let per = y.len() / idx.len();
            let mut score = 0.0;
            for (pc, yc) in p.data().chunks(per).zip(y.data().chunks(per)) {
                score += iou(pc, yc, TRAIN_THRESHOLD)?;
            }
            Ok((loss.as_f64(), score))
        },
        observe,
    )
}

/// Eval-mode logits `(N, classes)` for every grid.
pub fn predict_logits<T: Scalar>(model: &mut Model<T>, grids: &[VoxelGrid], batch_size: usize) -> Result<Tensor<T>> {
    let mut rows = Vec::new();
    let mut classes = 0;
    for chunk in grids.chunks(batch_size.max(1)) {
        let logits = model.forward(&stack_grids::<T>(chunk)?, Mode::Eval)?;
        classes = logits.dim(1);
        rows.extend_from_slice(logits.data());
    }
    Tensor::new(&[grids.len(), classes], rows)
}

/// Eval-mode occupancy probabilities for every latent row.
pub fn predict_occupancy<T: Scalar>(model: &mut Model<T>, latents: &Tensor<f32>, batch_size: usize) -> Result<Vec<VoxelGrid>> {
    let n = latents.dim(0);
    let mut grids = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let p = sigmoid(&model.forward(&gather_rows::<T>(latents, idx)?, Mode::Eval)?);
        let [_, c, d, h, w] = p.shape() else {
            return Err(Error::InvalidShape(format!("decoder output {:?} is not a voxel batch", p.shape())));
        };
        if *c != 1 || d != h || h != w {
            return Err(Error::InvalidShape(format!("decoder output {:?} is not a cubic occupancy grid", p.shape())));
        }
        let per = d * h * w;
        for chunk in p.data().chunks(per) {
            grids.push(VoxelGrid::from_values(*d, chunk)?);
        }
    }
    Ok(grids)
}

pub fn evaluate_classifier<T: Scalar>(model: &mut Model<T>, data: &Dataset, batch_size: usize) -> Result<EvalResult> {
    let logits = predict_logits(model, &data.voxels, batch_size)?;
    let c = logits.dim(1);
    let hits: Vec<f64> =
        logits.data().chunks(c).zip(&data.labels).map(|(row, &l)| (argmax(row) == l) as u8 as f64).collect();
    let (mean, per_class) = class_mean(&hits, &data.labels)?;
    Ok(EvalResult {
        accuracy: Some(mean),
        per_class,
        ..EvalResult::default()
    })
}

pub fn evaluate_reconstructor<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    thresholds: &[f64],
    batch_size: usize,
) -> Result<EvalResult> {
    let preds = predict_occupancy(model, &data.latents, batch_size)?;
    let (sweep, per_class) = threshold_sweep_batch(&preds, &data.voxels, &data.labels, thresholds)?;
    let best = sweep.entries.iter().position(|e| *e == sweep.best).unwrap();
    Ok(EvalResult {
        miou: Some(sweep.best.1),
        per_class: per_class[best].clone(),
        sweep: Some(sweep),
        ..EvalResult::default()
    })
}
