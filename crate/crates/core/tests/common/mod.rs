#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use volt3d::kernels::geometry::ConvGeometry;
use volt3d::kernels::layers::{Layer, Mode};
use volt3d::kernels::{
    conv3d_backward, conv3d_forward, convtranspose3d_forward, depthwise3d_forward, pointwise_forward, DepthwiseKernel,
    PointwiseKernel, PseudoKernelPair, StdKernel,
};
use volt3d::kernels::pseudo::{pseudo_horizontal, pseudo_vertical};
use volt3d::oracle::{
    finite_diff_grad, max_relative_error, naive_conv3d, naive_convtranspose, naive_depthwise, naive_pointwise,
    naive_pseudo, MacCounter,
};
use volt3d::{Result, Seed, Tensor};

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, Seed(rng.gen()), 1.0)
}

/// Spatial extents and a `(k, stride, pad)` that yield at least one output.
fn geometry(rng: &mut ChaCha8Rng) -> (usize, usize, usize, [usize; 3]) {
    let k: usize = [1, 2, 3, 5][rng.gen_range(0..4)];
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=k / 2);
    let lo = k.saturating_sub(2 * pad).max(1);
    let dims = [0; 3].map(|_| rng.gen_range(lo..=8));
    (k, stride, pad, dims)
}

fn shape5(n: usize, c: usize, d: [usize; 3]) -> [usize; 5] {
    [n, c, d[0], d[1], d[2]]
}

/// Largest absolute difference over `cases` random standard convolutions.
pub fn conv_sweep(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (k, s, p, dims) = geometry(&mut rng);
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = randn(&shape5(rng.gen_range(1..=2), ci, dims), &mut rng);
        let w = randn(&[co, ci, k, k, k], &mut rng);
        let fast = conv3d_forward(&x, &StdKernel::new(w.clone())?, ConvGeometry::new(s, p)?)?;
        let slow = naive_conv3d(&x, &w, [s; 3], [p; 3], &mut MacCounter::new())?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

pub fn depthwise_sweep(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (k, s, p, dims) = geometry(&mut rng);
        let c = rng.gen_range(1..=6);
        let x = randn(&shape5(rng.gen_range(1..=2), c, dims), &mut rng);
        let w = randn(&[c, k, k, k], &mut rng);
        let b = randn(&[c], &mut rng);
        let fast = depthwise3d_forward(&x, &DepthwiseKernel::new(w.clone(), b.clone())?, ConvGeometry::new(s, p)?)?;
        let slow = naive_depthwise(&x, &w, &b, s, p, &mut MacCounter::new())?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

pub fn pointwise_sweep(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (_, _, _, dims) = geometry(&mut rng);
        let (ci, co) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let x = randn(&shape5(rng.gen_range(1..=2), ci, dims), &mut rng);
        let w = randn(&[co, ci], &mut rng);
        let b = randn(&[co], &mut rng);
        let fast = pointwise_forward(&x, &PointwiseKernel::new(w.clone(), b.clone())?)?;
        let slow = naive_pointwise(&x, &w, &b, &mut MacCounter::new())?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

/// Pseudo-3D as the two raw steps, no normalization or activation between.
pub fn pseudo_sweep(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (k, s, p, dims) = geometry(&mut rng);
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = randn(&shape5(rng.gen_range(1..=2), ci, dims), &mut rng);
        let pair = PseudoKernelPair::new(randn(&[ci, ci, 1, k, k], &mut rng), randn(&[co, ci, k, 1, 1], &mut rng))?;
        let geom = ConvGeometry::new(s, p)?;
        let fast = pseudo_vertical(&pseudo_horizontal(&x, &pair, geom)?, &pair, geom)?;
        let slow = naive_pseudo(&x, &pair.horizontal, &pair.vertical, s, p, &mut MacCounter::new())?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

pub fn convtranspose_sweep(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=2);
        let dims = [0; 3].map(|_| rng.gen_range(1..=4));
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = randn(&shape5(rng.gen_range(1..=2), ci, dims), &mut rng);
        let w = randn(&[ci, co, k, k, k], &mut rng);
        let fast = convtranspose3d_forward(&x, &w, s)?;
        let slow = naive_convtranspose(&x, &w, s, &mut MacCounter::new())?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

/// Depthwise then pointwise with a rank-one kernel `K[n, m] = D[m] P[n, m]`
/// against the standard convolution with `K`. Zero biases.
pub fn factorization_gap(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (k, s, p, dims) = geometry(&mut rng);
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = randn(&shape5(1, ci, dims), &mut rng);
        let d = randn(&[ci, k, k, k], &mut rng);
        let pw = randn(&[co, ci], &mut rng);
        let taps = k * k * k;
        let full = Tensor::from_fn(&[co, ci, k, k, k], |i| {
            let (n, rest) = (i / (ci * taps), i % (ci * taps));
            let (m, t) = (rest / taps, rest % taps);
            d.data()[m * taps + t] * pw.data()[n * ci + m]
        });
        let geom = ConvGeometry::new(s, p)?;
        let direct = conv3d_forward(&x, &StdKernel::new(full)?, geom)?;
        let dwk = DepthwiseKernel::new(d, Tensor::zeros(&[ci]))?;
        let pwk = PointwiseKernel::new(pw, Tensor::zeros(&[co]))?;
        let two_step = pointwise_forward(&depthwise3d_forward(&x, &dwk, geom)?, &pwk)?;
        worst = worst.max(direct.max_abs_diff(&two_step)?);
    }
    Ok(worst)
}

/// `|<conv(x), y> - <x, convT(y)>|` with matching stride and no padding.
pub fn adjoint_gap(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=3);
        let yd = [0; 3].map(|_| rng.gen_range(1..=3));
        let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        // x extents chosen so that the conv output is exactly `yd`
        let xd = yd.map(|e| (e - 1) * s + k);
        let x = randn(&shape5(1, ci, xd), &mut rng);
        let y = randn(&shape5(1, co, yd), &mut rng);
        let w = randn(&[co, ci, k, k, k], &mut rng);
        let conv = conv3d_forward(&x, &StdKernel::new(w.clone())?, ConvGeometry::new(s, 0)?)?;
        // the transposed layer maps co -> ci with the same tensor read as (c_in, c_out, ...)
        let convt = convtranspose3d_forward(&y, &w, s)?;
        worst = worst.max((conv.dot(&y)? - x.dot(&convt)?).abs());
    }
    Ok(worst)
}

/// Depthwise on `c` channels against `c` single-channel standard convs.
pub fn reduction_to_standard_gap(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (k, s, p, dims) = geometry(&mut rng);
        let c = rng.gen_range(1..=4);
        let x = randn(&shape5(1, c, dims), &mut rng);
        let w = randn(&[c, k, k, k], &mut rng);
        let geom = ConvGeometry::new(s, p)?;
        let dw = depthwise3d_forward(&x, &DepthwiseKernel::new(w.clone(), Tensor::zeros(&[c]))?, geom)?;
        let vol: usize = dims.iter().product();
        let taps = k * k * k;
        for ch in 0..c {
            let xc = Tensor::new(&shape5(1, 1, dims), x.data()[ch * vol..(ch + 1) * vol].to_vec())?;
            let wc = Tensor::new(&[1, 1, k, k, k], w.data()[ch * taps..(ch + 1) * taps].to_vec())?;
            let single = conv3d_forward(&xc, &StdKernel::new(wc)?, geom)?;
            let out_vol = single.len();
            let part = &dw.data()[ch * out_vol..(ch + 1) * out_vol];
            for (a, b) in part.iter().zip(single.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Pointwise against a standard conv with a `1 x 1 x 1` kernel.
pub fn k1_equivalence_gap(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (_, _, _, dims) = geometry(&mut rng);
        let (ci, co) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let x = randn(&shape5(2, ci, dims), &mut rng);
        let w = randn(&[co, ci], &mut rng);
        let pw = pointwise_forward(&x, &PointwiseKernel::new(w.clone(), Tensor::zeros(&[co]))?)?;
        let conv = conv3d_forward(&x, &StdKernel::new(w.reshape(&[co, ci, 1, 1, 1])?)?, ConvGeometry::valid())?;
        worst = worst.max(pw.max_abs_diff(&conv)?);
    }
    Ok(worst)
}

/// Worst relative error between a layer's analytic gradients and central
/// differences of `L = <layer(x), r>`, over the input and every trainable
/// parameter.
pub fn layer_grad_error(layer: &mut dyn Layer<f64>, x: &Tensor, seed: Seed, h: f64) -> Result<f64> {
    let y = layer.forward(x, Mode::Train)?;
    let r = Tensor::randn(y.shape(), seed, 1.0);
    for p in layer.params_mut() {
        if p.trainable {
            p.grad.fill(0.0);
        }
    }
    let gx = layer.backward(&r)?;
    let mut worst: f64 = 0.0;

    let mut eval_at_input = |v: &[f64]| -> f64 {
        let xi = Tensor::new(x.shape(), v.to_vec()).unwrap();
        layer.forward(&xi, Mode::Train).unwrap().dot(&r).unwrap()
    };
    let num = finite_diff_grad(&mut eval_at_input, x.data(), h)?;
    worst = worst.max(max_relative_error(gx.data(), &num));

    let count = layer.params().len();
    for pi in 0..count {
        if !layer.params()[pi].trainable {
            continue;
        }
        let analytic = layer.params()[pi].grad.data().to_vec();
        let start = layer.params()[pi].value.data().to_vec();
        let num = finite_diff_grad(
            |v: &[f64]| {
                layer.params_mut()[pi].value.data_mut().copy_from_slice(v);
                layer.forward(x, Mode::Train).unwrap().dot(&r).unwrap()
            },
            &start,
            h,
        )?;
        layer.params_mut()[pi].value.data_mut().copy_from_slice(&start);
        worst = worst.max(max_relative_error(&analytic, &num));
    }
    Ok(worst)
}

/// Backward of the standard conv against central differences.
pub fn conv_grad_error(seed: u64) -> Result<f64> {
    let mut rng = Seed(seed).rng();
    let (k, s, p, dims) = geometry(&mut rng);
    let dims = dims.map(|d| d.min(5));
    let dims = dims.map(|d| d.max(k.saturating_sub(2 * p)).max(1));
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let x = randn(&shape5(1, ci, dims), &mut rng);
    let w = randn(&[co, ci, k, k, k], &mut rng);
    let geom = ConvGeometry::new(s, p)?;
    let y = conv3d_forward(&x, &StdKernel::new(w.clone())?, geom)?;
    let r = randn(y.shape(), &mut rng);
    let g = conv3d_backward(&x, &StdKernel::new(w.clone())?, geom, &r)?;
    let fx = finite_diff_grad(
        |v: &[f64]| {
            let xi = Tensor::new(x.shape(), v.to_vec()).unwrap();
            conv3d_forward(&xi, &StdKernel::new(w.clone()).unwrap(), geom).unwrap().dot(&r).unwrap()
        },
        x.data(),
        1e-5,
    )?;
    let fw = finite_diff_grad(
        |v: &[f64]| {
            let wi = Tensor::new(w.shape(), v.to_vec()).unwrap();
            conv3d_forward(&x, &StdKernel::new(wi).unwrap(), geom).unwrap().dot(&r).unwrap()
        },
        w.data(),
        1e-5,
    )?;
    Ok(max_relative_error(g.input.data(), &fx).max(max_relative_error(g.weights.data(), &fw)))
}

/// Zero-pads the spatial axes of `(N, C, D, H, W)` by `before` and `after`.
pub fn zero_pad(x: &Tensor, before: [usize; 3], after: [usize; 3]) -> Tensor {
    let s = x.shape();
    let out = [s[0], s[1], s[2] + before[0] + after[0], s[3] + before[1] + after[1], s[4] + before[2] + after[2]];
    let mut y = Tensor::zeros(&out);
    for n in 0..s[0] {
        for c in 0..s[1] {
            for d in 0..s[2] {
                for h in 0..s[3] {
                    for w in 0..s[4] {
                        *y.at_mut(&[n, c, d + before[0], h + before[1], w + before[2]]) = x.at(&[n, c, d, h, w]);
                    }
                }
            }
        }
    }
    y
}

/// Split of `k - 1` padding that keeps the extent for any kernel size.
pub fn same_split(k: usize) -> (usize, usize) {
    let before = (k - 1) / 2;
    (before, k - 1 - before)
}

/// Multiplications counted by the instrumented oracles compared with the
/// closed-form MAC counts. Returns the number of configurations checked.
pub fn mac_sweep() -> std::result::Result<usize, String> {
    use volt3d::cost::{macs_depthwise_separable, macs_pseudo, macs_standard};
    let mut checked = 0;
    for k in [1usize, 2, 3, 5] {
        for cf in [1usize, 2, 4, 8] {
            for cg in [1usize, 2, 4, 8] {
                for e in [1usize, 2, 4] {
                    let err = |what: &str, got: u64, want: u64| {
                        format!("{what} k={k} cf={cf} cg={cg} extent={e}: counted {got}, formula {want}")
                    };
                    let (b, a) = same_split(k);
                    let x = Tensor::<f64>::zeros(&[1, cf, e, e, e]);
                    let padded = zero_pad(&x, [b; 3], [a; 3]);

                    let mut ctr = MacCounter::new();
                    let g = naive_conv3d(&padded, &Tensor::zeros(&[cg, cf, k, k, k]), [1; 3], [0; 3], &mut ctr)
                        .map_err(|e| e.to_string())?;
                    let want = macs_standard(k, cf, cg, e, e, e).map_err(|e| e.to_string())?;
                    if g.shape()[2..] != [e, e, e] || ctr.count() != want {
                        return Err(err("standard", ctr.count(), want));
                    }

                    let mut ctr = MacCounter::new();
                    let h = naive_depthwise(&padded, &Tensor::zeros(&[cf, k, k, k]), &Tensor::zeros(&[cf]), 1, 0, &mut ctr)
                        .map_err(|e| e.to_string())?;
                    naive_pointwise(&h, &Tensor::zeros(&[cg, cf]), &Tensor::zeros(&[cg]), &mut ctr)
                        .map_err(|e| e.to_string())?;
                    let want = macs_depthwise_separable(k, cf, cg, e, e, e).map_err(|e| e.to_string())?;
                    if ctr.count() != want {
                        return Err(err("depthwise-separable", ctr.count(), want));
                    }

                    // the two pseudo-3D steps, each padded only along its own axes
                    let mut ctr = MacCounter::new();
                    let hx = zero_pad(&x, [0, b, b], [0, a, a]);
                    let mid = naive_conv3d(&hx, &Tensor::zeros(&[cf, cf, 1, k, k]), [1; 3], [0; 3], &mut ctr)
                        .map_err(|e| e.to_string())?;
                    let vx = zero_pad(&mid, [b, 0, 0], [a, 0, 0]);
                    naive_conv3d(&vx, &Tensor::zeros(&[cg, cf, k, 1, 1]), [1; 3], [0; 3], &mut ctr)
                        .map_err(|e| e.to_string())?;
                    let want = macs_pseudo(k, cf, cg, e, e, e).map_err(|e| e.to_string())?;
                    if ctr.count() != want {
                        return Err(err("pseudo", ctr.count(), want));
                    }
                    if k % 2 == 1 {
                        let mut ctr2 = MacCounter::new();
                        naive_pseudo(&x, &Tensor::zeros(&[cf, cf, 1, k, k]), &Tensor::zeros(&[cg, cf, k, 1, 1]), 1, b, &mut ctr2)
                            .map_err(|e| e.to_string())?;
                        if ctr2.count() != want {
                            return Err(err("pseudo (fused oracle)", ctr2.count(), want));
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

/// A layer built from a seed together with its input, checked against
/// central differences with step `h`.
pub struct GradCase {
    pub label: String,
    pub h: f64,
    pub tol: f64,
    pub make: Box<dyn Fn(u64) -> (Box<dyn Layer<f64>>, Tensor)>,
}

fn case(label: &str, h: f64, tol: f64, make: impl Fn(u64) -> (Box<dyn Layer<f64>>, Tensor) + 'static) -> GradCase {
    GradCase {
        label: label.to_string(),
        h,
        tol,
        make: Box::new(make),
    }
}

fn seeded_input(seed: u64, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, Seed(seed).derive(77), 1.0)
}

/// Every differentiable layer type of the engine.
pub fn grad_cases() -> Vec<GradCase> {
    use volt3d::kernels::geometry::Window;
    use volt3d::kernels::layers::{
        BatchNormLayer, ConvLayer, ConvTransposeLayer, DepthwiseLayer, LinearLayer, MaxPoolLayer, PointwiseLayer,
        ReluLayer, ReshapeLayer,
    };
    use volt3d::kernels::pseudo::{horizontal_window, vertical_window};
    use volt3d::netgraph::{build_layer, BlockLayer, BlockSpec, ConvFlavor, LayerSpec};

    let mut cases = vec![
        case("conv", 1e-5, 1e-5, |seed| {
            let mut rng = Seed(seed).rng();
            let k = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            let geom = ConvGeometry::new(stride, k / 2).unwrap();
            let layer = ConvLayer::new("c", 2, 3, Window::cubic(k, geom), Seed(seed));
            (Box::new(layer), seeded_input(seed, &[2, 2, 4, 4, 3]))
        }),
        case("pseudo horizontal", 1e-5, 1e-5, |seed| {
            let layer = ConvLayer::new("h", 2, 2, horizontal_window(3, ConvGeometry::same(3)), Seed(seed));
            (Box::new(layer), seeded_input(seed, &[1, 2, 3, 4, 4]))
        }),
        case("pseudo vertical", 1e-5, 1e-5, |seed| {
            let layer = ConvLayer::new("v", 2, 3, vertical_window(3, ConvGeometry::same(3)), Seed(seed));
            (Box::new(layer), seeded_input(seed, &[1, 2, 4, 3, 3]))
        }),
        case("depthwise", 1e-5, 1e-5, |seed| {
            let geom = ConvGeometry::new(1 + (seed as usize % 2), 1).unwrap();
            (Box::new(DepthwiseLayer::new("d", 3, 3, geom, Seed(seed))), seeded_input(seed, &[2, 3, 4, 4, 4]))
        }),
        case("pointwise", 1e-5, 1e-5, |seed| {
            (Box::new(PointwiseLayer::new("p", 3, 4, Seed(seed))), seeded_input(seed, &[2, 3, 3, 3, 3]))
        }),
        case("convtranspose", 1e-5, 1e-5, |seed| {
            let (k, s) = [(2, 2), (4, 1), (3, 2)][seed as usize % 3];
            (Box::new(ConvTransposeLayer::new("t", 2, 3, k, s, Seed(seed))), seeded_input(seed, &[2, 2, 2, 2, 3]))
        }),
        case("batchnorm", 1e-5, 1e-5, |seed| {
            let mut bn = BatchNormLayer::new("bn", 3);
            bn.gamma.value = Tensor::randn(&[3], Seed(seed).derive(1), 1.0);
            bn.beta.value = Tensor::randn(&[3], Seed(seed).derive(2), 1.0);
            (Box::new(bn), seeded_input(seed, &[2, 3, 2, 2, 3]))
        }),
        case("relu", 1e-6, 1e-5, |seed| (Box::new(ReluLayer::new()), seeded_input(seed, &[2, 3, 4]))),
        case("maxpool", 1e-6, 1e-5, |seed| (Box::new(MaxPoolLayer::new(2, 2)), seeded_input(seed, &[2, 2, 4, 4, 5]))),
        case("reshape", 1e-5, 1e-5, |seed| (Box::new(ReshapeLayer::new(vec![6, 2])), seeded_input(seed, &[3, 3, 4]))),
        case("linear", 1e-5, 1e-6, |seed| (Box::new(LinearLayer::new("fc", 5, 4, Seed(seed))), seeded_input(seed, &[3, 5]))),
    ];
    for flavor in ConvFlavor::ALL {
        for residual in [false, true] {
            let label = format!("block {flavor}{}", if residual { " residual" } else { "" });
            cases.push(case(&label, 1e-6, 1e-5, move |seed| {
                let block = BlockLayer::new("b", BlockSpec::pair(2, residual, flavor), Seed(seed));
                (Box::new(block), seeded_input(seed, &[2, 2, 3, 3, 3]))
            }));
        }
        cases.push(case(&format!("unit {flavor}"), 1e-6, 1e-5, move |seed| {
            let spec = LayerSpec::ConvUnit {
                c_in: 2,
                c_out: 3,
                k: 3,
                flavor,
            };
            (build_layer::<f64>("u", &spec, &[2, 3, 3, 3], Seed(seed)), seeded_input(seed, &[2, 2, 3, 3, 3]))
        }));
    }
    cases
}

/// Worst relative error of a case over seeds `0..seeds`.
pub fn worst_grad_error(case: &GradCase, seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let (mut layer, x) = (case.make)(seed);
        worst = worst.max(layer_grad_error(layer.as_mut(), &x, Seed(1000 + seed), case.h)?);
    }
    Ok(worst)
}

/// Worst relative errors of the softmax cross-entropy and voxel BCE
/// gradients over seeds `0..seeds`.
pub fn loss_grad_errors(seeds: u64) -> Result<(f64, f64)> {
    use volt3d::kernels::{softmax_cross_entropy, voxel_bce};
    let (mut ce, mut bce): (f64, f64) = (0.0, 0.0);
    for seed in 0..seeds {
        let logits = seeded_input(seed, &[4, 13]).scale(3.0);
        let labels: Vec<usize> = (0..4).map(|i| (seed as usize * 7 + i * 5) % 13).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels)?;
        let num = finite_diff_grad(
            |v| softmax_cross_entropy(&Tensor::new(logits.shape(), v.to_vec()).unwrap(), &labels).unwrap().0,
            logits.data(),
            1e-5,
        )?;
        ce = ce.max(max_relative_error(g.data(), &num));

        let logits = seeded_input(seed, &[2, 1, 3, 3, 3]).scale(2.0);
        let target = Tensor::rand_uniform(logits.shape(), Seed(seed).derive(5), 0.0, 1.0).map(|v: f64| v.round());
        let (_, g) = voxel_bce(&logits, &target)?;
        let num = finite_diff_grad(
            |v| voxel_bce(&Tensor::new(logits.shape(), v.to_vec()).unwrap(), &target).unwrap().0,
            logits.data(),
            1e-5,
        )?;
        bce = bce.max(max_relative_error(g.data(), &num));
    }
    Ok((ce, bce))
}
