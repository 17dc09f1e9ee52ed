use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use volt3d::cost::{self, group_digits, model_cost, reduction_percent, Comparison, CostReport, CountConvention, Rational};
use volt3d::netgraph::{RecDecoderConfig, VggConfig};
use volt3d::oracle::instrumented_macs;
use volt3d::training::{
    evaluate_classifier, evaluate_reconstructor, train_classifier_observed, train_reconstructor_observed, EpochRecord,
    LrSchedule, OptimizerKind, TrainConfig, SWEEP_THRESHOLDS, TRAIN_THRESHOLD,
};
use volt3d::voxio::{gen_dataset, load_dataset, load_model, save_dataset, save_model, Dataset};
use volt3d::{ConvFlavor, DType, Model, ModelSpec, Scalar, Seed};

use crate::args::*;
use crate::{usage, VerifyFailed};

/// Column-aligned text table; the first column is left aligned.
fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn arch_label(arch: Arch) -> &'static str {
    match arch {
        Arch::Rec6 => "Rec-6",
        Arch::Resrec6 => "ResRec-6",
        Arch::Rec16 => "Rec-16",
        Arch::Resrec16 => "ResRec-16",
        Arch::Vgg13 => "VGG13",
        Arch::Vgg16 => "VGG16",
        Arch::Vgg19 => "VGG19",
    }
}

fn full_size_spec(arch: Arch, flavor: ConvFlavor, resolution: usize) -> Result<ModelSpec> {
    if let Some((depth, residual)) = arch.decoder() {
        return Ok(RecDecoderConfig::new(depth, residual, flavor).build()?);
    }
    let cfg = VggConfig {
        resolution,
        ..VggConfig::new(arch.vgg().unwrap(), flavor)
    };
    cfg.build().map_err(|e| usage(e.to_string()))
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let conv: CountConvention = a.convention.into();
    let flavor: ConvFlavor = a.flavor.into();
    let is_rec = a.arch.decoder().is_some();
    let reports: Vec<(ConvFlavor, CostReport)> = ConvFlavor::ALL
        .iter()
        .map(|&f| Ok((f, model_cost(&full_size_spec(a.arch, f, a.resolution)?, conv)?)))
        .collect::<Result<_>>()?;
    let label = arch_label(a.arch);
    let named: Vec<(String, &CostReport)> = reports
        .iter()
        .map(|(f, r)| {
            let name = match f {
                ConvFlavor::Standard => label.to_string(),
                other => format!("{label} {other}"),
            };
            (name, r)
        })
        .collect();
    let total = |r: &CostReport| if is_rec { r.body_params } else { r.total_params };
    let comparison = Comparison::new(&named, total);
    let report = &reports.iter().find(|(f, _)| *f == flavor).unwrap().1;
    let base = &reports[0].1;

    if a.format == Format::Csv {
        print!("{}", if a.layers { report.to_csv() } else { comparison.to_csv() });
        return Ok(());
    }

    let rows: Vec<Vec<String>> = report
        .layers
        .iter()
        .map(|l| {
            let (k, ci, co, ext) = match l.dims {
                Some([k, ci, co, d, h, w]) => (k.to_string(), ci.to_string(), co.to_string(), format!("{d}x{h}x{w}")),
                None => Default::default(),
            };
            let part = match l.part {
                volt3d::netgraph::Part::Encoder => "encoder",
                volt3d::netgraph::Part::Body => "body",
            };
            vec![l.name.clone(), l.kind.to_string(), part.into(), k, ci, co, ext, group_digits(l.params), group_digits(l.macs)]
        })
        .collect();
    let mut out = format!("{} ({} convolutions, {} convention)\n\n", report.model, flavor, a.convention.name());
    out.push_str(&render(&["layer", "kind", "part", "k", "c_in", "c_out", "output", "params", "MACs"], &rows));
    out.push('\n');
    let total_name = if is_rec { "decoder total" } else { "total" };
    let _ = writeln!(out, "conv-layer subtotal: {}", group_digits(report.conv_params));
    let _ = writeln!(out, "{total_name}: {}", group_digits(total(report)));
    if is_rec {
        let _ = writeln!(out, "total with encoder bridge: {}", group_digits(report.total_params));
    }
    let _ = writeln!(out, "MACs: {} in conv layers, {} total", group_digits(report.conv_macs), group_digits(report.total_macs));
    if flavor != ConvFlavor::Standard {
        let _ = writeln!(
            out,
            "reduction vs standard: conv layers {}, {total_name} {}",
            reduction_percent(base.conv_params, report.conv_params),
            reduction_percent(total(base), total(report))
        );
    }
    let _ = writeln!(out, "\nComparison\n\n{}", comparison.to_markdown());
    print!("{out}");
    Ok(())
}

impl Convention {
    fn name(self) -> &'static str {
        match self {
            Convention::Paper => "paper",
            Convention::All => "all",
            Convention::Weights => "weights",
        }
    }
}

pub fn flops(a: FlopsArgs) -> Result<()> {
    let [d, h, w] = a.dhw[..] else {
        return Err(usage("--dhw needs three extents d,h,w"));
    };
    if [a.k, a.cin, a.cout, d, h, w].contains(&0) {
        return Err(usage("--k, --cin, --cout and --dhw must be positive"));
    }
    let count = |f| cost::macs(f, a.k, a.cin, a.cout, d, h, w);
    let (std, dw, pd) = (count(ConvFlavor::Standard)?, count(ConvFlavor::Depthwise)?, count(ConvFlavor::Pseudo)?);
    let dw_std = Rational::new(dw as u128, std as u128);
    let dw_pd = Rational::new(dw as u128, pd as u128);
    if dw_std != cost::reduction_ratio_dw(a.k, a.cout)? || dw_pd != cost::ratio_dw_vs_pseudo(a.k, a.cin, a.cout)? {
        anyhow::bail!("count ratios disagree with the closed-form ratios");
    }
    let approx = cost::approx_dw_vs_pseudo(a.k, a.cin)?;
    let k3 = a.k.pow(3);

    let verified = if a.verify {
        for (flavor, expected) in [(ConvFlavor::Standard, std), (ConvFlavor::Depthwise, dw), (ConvFlavor::Pseudo, pd)] {
            let counted = instrumented_macs(flavor, a.k, a.cin, a.cout, [d, h, w]).map_err(|e| match e {
                volt3d::Error::OracleTooLarge(msg) => usage(format!("--verify only handles small layers: {msg}")),
                other => other.into(),
            })?;
            if counted != expected {
                return Err(VerifyFailed(format!("{flavor}: oracle counted {counted} multiplies, formula gives {expected}")).into());
            }
        }
        true
    } else {
        false
    };

    match a.format {
        Format::Csv => {
            println!("k,c_in,c_out,d,h,w,macs_standard,macs_dw,macs_pseudo,dw_over_standard,dw_over_standard_decimal,dw_over_pseudo,dw_over_pseudo_decimal,verified");
            println!(
                "{},{},{},{d},{h},{w},{std},{dw},{pd},{dw_std},{:.6},{dw_pd},{:.6},{verified}",
                a.k,
                a.cin,
                a.cout,
                cost::to_f64(dw_std),
                cost::to_f64(dw_pd)
            );
        }
        Format::Table => {
            println!("k={} c_in={} c_out={} output {d}x{h}x{w}", a.k, a.cin, a.cout);
            let rows = vec![
                vec!["standard".to_string(), std.to_string()],
                vec!["dw-separable".to_string(), dw.to_string()],
                vec!["pseudo-3D".to_string(), pd.to_string()],
            ];
            print!("{}", render(&["flavor", "MACs"], &rows));
            println!("dw:standard = 1/{} + 1/{k3} = {dw_std} = {:.6}", a.cout, cost::to_f64(dw_std));
            println!(
                "dw:pseudo = (k^3 + c_out)/(k^2 c_in + k c_out) = {dw_pd} = {:.6} (approx k/c_in = {approx} = {:.6})",
                cost::to_f64(dw_pd),
                cost::to_f64(approx)
            );
            if verified {
                println!("verified: oracle multiply counts equal the formulas for all three flavors");
            }
        }
    }
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let samples = gen_dataset(a.samples, a.resolution, a.classes, Seed(a.seed)).map_err(|e| usage(e.to_string()))?;
    save_dataset(&samples, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} samples ({}^3, {} classes, seed {}) to {}",
        a.samples,
        a.resolution,
        a.classes,
        a.seed,
        a.out.display()
    );
    Ok(())
}

struct DataDefaults {
    samples: usize,
    resolution: usize,
    classes: usize,
}

const CLS_DATA: DataDefaults = DataDefaults {
    samples: 30,
    resolution: 8,
    classes: 3,
};
const REC_DATA: DataDefaults = DataDefaults {
    samples: 10,
    resolution: 32,
    classes: 5,
};

fn dataset(a: &SynthArgs, defaults: &DataDefaults) -> Result<Dataset> {
    if let Some(dir) = &a.data {
        return load_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()));
    }
    let samples = gen_dataset(
        a.samples.unwrap_or(defaults.samples),
        a.resolution.unwrap_or(defaults.resolution),
        a.classes.unwrap_or(defaults.classes),
        Seed(a.seed),
    )
    .map_err(|e| usage(e.to_string()))?;
    Ok(Dataset::from_samples(&samples)?)
}

fn train_config(a: &TrainArgs, default_lr: f64) -> Result<TrainConfig> {
    let mut cfg = match a.preset {
        Some(Preset::PaperCls) => TrainConfig::paper_classification(),
        Some(Preset::PaperRec) => TrainConfig::paper_reconstruction(),
        None => TrainConfig::new(10, default_lr, 10),
    };
    if let Some(s) = &a.schedule {
        cfg.schedule = s.parse::<LrSchedule>().map_err(|e| usage(e.to_string()))?;
        cfg.epochs = a.epochs.unwrap_or(cfg.schedule.total_epochs());
    } else if a.epochs.is_some() || a.lr.is_some() {
        cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
        let lr = a.lr.unwrap_or(cfg.schedule.spans[0].1);
        cfg.schedule = LrSchedule::constant(cfg.epochs, lr);
    }
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.optimizer = match a.optimizer {
        Opt::Adam => OptimizerKind::ADAM,
        Opt::Sgd => OptimizerKind::SGD,
    };
    cfg.seed = Seed(a.seed()).derive(2);
    cfg.dtype = match a.dtype {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

impl TrainArgs {
    fn seed(&self) -> u64 {
        self.data.seed
    }
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("net")
}

fn train_typed<T: Scalar>(spec: &ModelSpec, data: &Dataset, a: &TrainArgs, cfg: &TrainConfig, task: Task) -> Result<()> {
    let mut model = Model::<T>::new(spec, Seed(a.seed()).derive(1))?;
    let eval_batch = cfg.batch_size;
    let mut eval_metric = None;
    let observe = |r: &EpochRecord, model: &mut Model<T>| -> volt3d::Result<bool> {
        if a.verbose {
            eprintln!("epoch {:>4}  lr {:e}  loss {:.6}  metric {:.4}", r.epoch, r.lr, r.loss, r.metric);
        }
        let Some(target) = a.stop_at else {
            return Ok(false);
        };
        if r.metric < target {
            return Ok(false);
        }
        let m = match task {
            Task::Cls => evaluate_classifier(model, data, eval_batch)?.accuracy,
            Task::Rec => evaluate_reconstructor(model, data, &[TRAIN_THRESHOLD], eval_batch)?.miou,
        }
        .unwrap_or(0.0);
        eval_metric = Some(m);
        Ok(m >= target)
    };
    let history = match task {
        Task::Cls => train_classifier_observed(&mut model, data, cfg, observe)?,
        Task::Rec => train_reconstructor_observed(&mut model, data, cfg, observe)?,
    };
    history.write_csv(&a.history).with_context(|| format!("writing {}", a.history.display()))?;
    let last = history.last().context("no epochs were run")?;
    let metric = match task {
        Task::Cls => "train accuracy",
        Task::Rec => "train mIoU(t=0.3)",
    };
    println!(
        "{}: {} epochs, final loss {:.6}, {metric} {:.4}",
        spec.name,
        history.records.len(),
        last.loss,
        last.metric
    );
    if let Some(m) = eval_metric {
        println!("eval-mode metric on the training set at the last check: {m:.4}");
    }
    println!("history written to {}", a.history.display());
    if let Some(out) = &a.out {
        save_model(&model, out).with_context(|| format!("writing {}", out.display()))?;
        std::fs::write(sidecar(out), spec.to_text())?;
        println!("checkpoint written to {} (model description {})", out.display(), sidecar(out).display());
    }
    Ok(())
}

fn train(spec: &ModelSpec, data: &Dataset, a: &TrainArgs, cfg: &TrainConfig, task: Task) -> Result<()> {
    match a.dtype {
        Precision::F32 => train_typed::<f32>(spec, data, a, cfg, task),
        Precision::F64 => train_typed::<f64>(spec, data, a, cfg, task),
    }
}

pub fn train_cls(a: TrainClsArgs) -> Result<()> {
    let variant = a.arch.vgg().ok_or_else(|| usage("train-cls needs a VGG architecture (vgg13, vgg16, vgg19)"))?;
    let cfg = train_config(&a.train, 1e-3)?;
    let data = dataset(&a.train.data, &CLS_DATA)?;
    let spec = VggConfig {
        resolution: data.resolution(),
        classes: data.classes(),
        width_divisor: a.train.width_divisor.unwrap_or(8),
        hidden: a.hidden.clone(),
        ..VggConfig::new(variant, a.train.flavor.into())
    }
    .build()
    .map_err(|e| usage(e.to_string()))?;
    train(&spec, &data, &a.train, &cfg, Task::Cls)
}

pub fn train_rec(a: TrainRecArgs) -> Result<()> {
    let (depth, residual) = a.arch.decoder().ok_or_else(|| usage("train-rec needs a decoder architecture (rec6, resrec6, rec16, resrec16)"))?;
    let cfg = train_config(&a.train, 3e-3)?;
    let data = dataset(&a.train.data, &REC_DATA)?;
    if data.resolution() != 32 {
        return Err(usage(format!("the decoder produces 32^3 grids but the data is {}^3", data.resolution())));
    }
    let spec = RecDecoderConfig {
        width_divisor: a.train.width_divisor.unwrap_or(4),
        latent_dim: data.latents.dim(1),
        ..RecDecoderConfig::new(depth, residual, a.train.flavor.into())
    }
    .build()
    .map_err(|e| usage(e.to_string()))?;
    train(&spec, &data, &a.train, &cfg, Task::Rec)
}

fn eval_typed<T: Scalar>(a: &EvalArgs, spec: &ModelSpec, data: &Dataset) -> Result<()> {
    let mut model = Model::<T>::new(spec, Seed(0))?;
    load_model(&mut model, &a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    match a.task {
        Task::Cls => {
            let r = evaluate_classifier(&mut model, data, a.batch)?;
            let acc = r.accuracy.unwrap_or(0.0);
            match a.format {
                Format::Csv => {
                    println!("class,accuracy");
                    for (c, v) in &r.per_class {
                        println!("{c},{v}");
                    }
                    println!("mean,{acc}");
                }
                Format::Table => {
                    println!("accuracy {acc:.6} over {} samples (mean of per-class accuracies)", data.len());
                    let rows: Vec<Vec<String>> = r.per_class.iter().map(|(c, v)| vec![c.to_string(), format!("{v:.6}")]).collect();
                    print!("{}", render(&["class", "accuracy"], &rows));
                }
            }
        }
        Task::Rec => {
            let r = evaluate_reconstructor(&mut model, data, &SWEEP_THRESHOLDS, a.batch)?;
            let sweep = r.sweep.context("missing threshold sweep")?;
            match a.format {
                Format::Csv => {
                    println!("threshold,miou,best");
                    for &(t, m) in &sweep.entries {
                        println!("{t},{m},{}", (t, m) == sweep.best);
                    }
                }
                Format::Table => {
                    let rows: Vec<Vec<String>> = sweep
                        .entries
                        .iter()
                        .map(|&(t, m)| vec![format!("{t}"), format!("{m:.6}"), if (t, m) == sweep.best { "best".into() } else { String::new() }])
                        .collect();
                    print!("{}", render(&["threshold", "mIoU", ""], &rows));
                    println!("best threshold {} with mIoU {:.6} over {} samples", sweep.best.0, sweep.best.1, data.len());
                }
            }
        }
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model_path = a.model.clone().unwrap_or_else(|| sidecar(&a.checkpoint));
    let text = std::fs::read_to_string(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let spec = ModelSpec::parse(&text).with_context(|| format!("parsing {}", model_path.display()))?;
    let defaults = match a.task {
        Task::Cls => CLS_DATA,
        Task::Rec => REC_DATA,
    };
    let data = dataset(&a.data, &defaults)?;
    match a.dtype {
        Precision::F32 => eval_typed::<f32>(&a, &spec, &data),
        Precision::F64 => eval_typed::<f64>(&a, &spec, &data),
    }
}
