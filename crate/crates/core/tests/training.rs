use rand::Rng;
use volt3d::kernels::{Layer, Mode, Param};
use volt3d::netgraph::{BlockLayer, BlockSpec, RecDecoderConfig, VggConfig};
use volt3d::training::{
    accuracy, evaluate_classifier, evaluate_reconstructor, miou, predict_occupancy, train_classifier,
    train_reconstructor, History, Optimizer, OptimizerKind, TrainConfig, SWEEP_THRESHOLDS,
};
use volt3d::voxio::{gen_dataset, Dataset};
use volt3d::{ConvFlavor, Error, Model, ModelSpec, Seed, Tensor};

fn small_vgg(flavor: ConvFlavor) -> ModelSpec {
    let mut cfg = VggConfig::new(13, flavor);
    cfg.resolution = 8;
    cfg.classes = 3;
    cfg.width_divisor = 8;
    cfg.hidden = vec![64, 64];
    cfg.build().unwrap()
}

fn small_decoder(flavor: ConvFlavor) -> ModelSpec {
    let mut cfg = RecDecoderConfig::new(6, false, flavor);
    cfg.width_divisor = 16;
    cfg.build().unwrap()
}

fn cls_data() -> Dataset {
    Dataset::from_samples(&gen_dataset(30, 8, 3, Seed(1)).unwrap()).unwrap()
}

fn rec_data(n: usize) -> Dataset {
    Dataset::from_samples(&gen_dataset(n, 32, 4, Seed(2)).unwrap()).unwrap()
}

fn bitwise_state<T: volt3d::Scalar>(m: &Model<T>) -> Vec<(String, Vec<u64>)> {
    m.state().into_iter().map(|(n, t)| (n, t.data().iter().map(|v| v.as_f64().to_bits()).collect())).collect()
}

#[test]
fn classifier_replay_is_bitwise() {
    let data = cls_data();
    let run = || {
        let mut m = Model::<f32>::new(&small_vgg(ConvFlavor::Depthwise), Seed(4)).unwrap();
        let h = train_classifier(&mut m, &data, &TrainConfig::new(4, 1e-3, 8)).unwrap();
        (h, bitwise_state(&m))
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);
}

#[test]
fn reconstructor_replay_is_bitwise() {
    let data = rec_data(4);
    let run = || {
        let mut m = Model::<f32>::new(&small_decoder(ConvFlavor::Pseudo), Seed(4)).unwrap();
        let h = train_reconstructor(&mut m, &data, &TrainConfig::new(2, 1e-3, 2)).unwrap();
        (h, bitwise_state(&m))
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = cls_data();
    for flavor in ConvFlavor::ALL {
        let mut m = Model::<f32>::new(&small_vgg(flavor), Seed(5)).unwrap();
        let before: Vec<_> = m.parameters().iter().filter(|p| p.trainable).map(|p| p.value.clone()).collect();
        train_classifier(&mut m, &data, &TrainConfig::new(2, 0.0, 10)).unwrap();
        let after: Vec<_> = m.parameters().iter().filter(|p| p.trainable).map(|p| p.value.clone()).collect();
        assert_eq!(before, after, "{flavor}");
    }
}

fn monotone_after(history: &History, from: usize, tol: f64) -> bool {
    history.records[from..].windows(2).all(|w| w[1].loss <= w[0].loss + tol)
}

#[test]
fn overfit_loss_is_eventually_monotone() {
    let data = cls_data();
    let passing = (0..5)
        .filter(|&seed| {
            let mut m = Model::<f32>::new(&small_vgg(ConvFlavor::Depthwise), Seed(seed)).unwrap();
            let mut cfg = TrainConfig::new(30, 3e-4, 30);
            cfg.seed = Seed(seed);
            let h = train_classifier(&mut m, &data, &cfg).unwrap();
            monotone_after(&h, 10, 1e-3)
        })
        .count();
    assert!(passing >= 4, "{passing} of 5 seeds monotone");
}

#[test]
fn random_logits_score_chance() {
    let mut rng = Seed(9).rng();
    let n = 10_000;
    let logits = Tensor::<f64>::randn(&[n, 13], Seed(10), 1.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..13)).collect();
    let acc = accuracy(&logits, &labels).unwrap();
    assert!((acc - 1.0 / 13.0).abs() < 0.02, "{acc}");
}

#[test]
fn nearest_neighbour_separates_two_classes() {
    let samples = gen_dataset(40, 16, 2, Seed(12)).unwrap();
    let hits = samples
        .iter()
        .filter(|s| {
            let nearest = samples
                .iter()
                .filter(|o| o.index != s.index)
                .min_by_key(|o| s.voxels.values().iter().zip(o.voxels.values()).filter(|(a, b)| a != b).count())
                .unwrap();
            nearest.label == s.label
        })
        .count();
    assert!(hits as f64 / samples.len() as f64 > 0.9, "{hits}/40");
}

#[test]
fn optimizer_ignores_layer_flavor() {
    for kind in [OptimizerKind::ADAM, OptimizerKind::SGD] {
        for flavor in ConvFlavor::ALL {
            let mut m = Model::<f64>::new(&small_vgg(flavor), Seed(3)).unwrap();
            for (i, p) in m.parameters_mut().into_iter().enumerate() {
                p.grad = Tensor::randn(p.value.shape(), Seed(i as u64), 1.0);
            }
            let mut lone: Vec<Param<f64>> = m.parameters().into_iter().cloned().collect();
            Optimizer::new(kind).step(m.parameters_mut(), 1e-2).unwrap();
            let mut opt = Optimizer::new(kind);
            opt.step(lone.iter_mut().collect(), 1e-2).unwrap();
            for (a, b) in m.parameters().iter().zip(&lone) {
                assert_eq!(a.value, b.value, "{kind} {flavor} {}", a.name);
            }
        }
    }
}

#[test]
fn residual_output_differs_by_skip_term() {
    for flavor in ConvFlavor::ALL {
        let x = Tensor::<f64>::randn(&[2, 3, 3, 3, 3], Seed(6), 1.0);
        let mut plain = BlockLayer::new("b", BlockSpec::pair(3, false, flavor), Seed(7));
        let mut res = BlockLayer::new("b", BlockSpec::pair(3, true, flavor), Seed(7));
        let y_plain = plain.forward(&x, Mode::Eval).unwrap();
        let y_res = res.forward(&x, Mode::Eval).unwrap();

        let mid = volt3d::kernels::relu(&plain.units[0].forward(&x, Mode::Eval).unwrap());
        let pre = plain.units[1].forward(&mid, Mode::Eval).unwrap();
        assert!(y_plain.max_abs_diff(&volt3d::kernels::relu(&pre)).unwrap() < 1e-12);
        let with_skip = volt3d::kernels::relu(&pre.ew_add(&x).unwrap());
        assert!(y_res.max_abs_diff(&with_skip).unwrap() < 1e-12, "{flavor}");
    }
}

#[test]
fn loading_another_flavor_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dw.vwt");
    let dw = Model::<f32>::new(&small_vgg(ConvFlavor::Depthwise), Seed(1)).unwrap();
    volt3d::voxio::save_model(&dw, &path).unwrap();
    let mut std = Model::<f32>::new(&small_vgg(ConvFlavor::Standard), Seed(1)).unwrap();
    let err = volt3d::voxio::load_model(&mut std, &path).unwrap_err();
    let first_name = &std.state()[0].0;
    match &err {
        Error::CheckpointShape { name, .. } | Error::MissingTensor(name) => assert_eq!(name, first_name),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains(first_name.as_str()));

    let mut same = Model::<f32>::new(&small_vgg(ConvFlavor::Depthwise), Seed(2)).unwrap();
    volt3d::voxio::load_model(&mut same, &path).unwrap();
    assert_eq!(bitwise_state(&same), bitwise_state(&dw));
}

#[test]
fn trained_sweep_reports_brute_force_best() {
    let data = rec_data(6);
    let mut m = Model::<f32>::new(&small_decoder(ConvFlavor::Depthwise), Seed(3)).unwrap();
    train_reconstructor(&mut m, &data, &TrainConfig::new(5, 3e-3, 3)).unwrap();
    let result = evaluate_reconstructor(&mut m, &data, &SWEEP_THRESHOLDS, 3).unwrap();
    let sweep = result.sweep.unwrap();

    let preds = predict_occupancy(&mut m, &data.latents, 3).unwrap();
    let mut brute = Vec::new();
    for &t in &SWEEP_THRESHOLDS {
        let mut per_class = vec![Vec::new(); data.classes()];
        for (p, (y, &l)) in preds.iter().zip(data.voxels.iter().zip(&data.labels)) {
            per_class[l].push(miou(p, y, t).unwrap());
        }
        let means: Vec<f64> = per_class.iter().filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        brute.push((t, means.iter().sum::<f64>() / means.len() as f64));
    }
    for (a, b) in sweep.entries.iter().zip(&brute) {
        assert!((a.1 - b.1).abs() < 1e-12);
    }
    let max = brute.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    assert!((sweep.best.1 - max).abs() < 1e-12);
    assert_eq!(result.miou, Some(sweep.best.1));
    let per_class_mean = result.per_class.iter().map(|p| p.1).sum::<f64>() / result.per_class.len() as f64;
    assert!((per_class_mean - sweep.best.1).abs() < 1e-12);
}

#[test]
fn classifier_eval_is_bounded_and_class_uniform() {
    let data = cls_data();
    let mut m = Model::<f32>::new(&small_vgg(ConvFlavor::Pseudo), Seed(8)).unwrap();
    let r = evaluate_classifier(&mut m, &data, 16).unwrap();
    let acc = r.accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let mean = r.per_class.iter().map(|p| p.1).sum::<f64>() / r.per_class.len() as f64;
    assert!((mean - acc).abs() < 1e-12);
}

#[test]
fn divergence_is_reported() {
    let data = cls_data();
    let mut m = Model::<f32>::new(&small_vgg(ConvFlavor::Standard), Seed(1)).unwrap();
    for p in m.parameters_mut() {
        if p.trainable {
            p.value.fill(f32::NAN);
        }
    }
    let err = train_classifier(&mut m, &data, &TrainConfig::new(2, 1e-3, 10)).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
}
