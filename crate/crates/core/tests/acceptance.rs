//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false` so the lines always reach stdout.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fsdn::checkpoint::{encode, load_checkpoint, save_checkpoint};
use fsdn::data::add_awgn;
use fsdn::eval::{evaluate_images, psnr, ssim, LoadedModel, Models, PSNR_CAP_DB};
use fsdn::frequency::{decompose, recombine, DEFAULT_BLUR_SIGMA};
use fsdn::layers::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward, mse_loss, relu_backward,
    relu_forward, BatchNormState, Mode, DEFAULT_EPSILON,
};
use fsdn::network::{parameter_count, receptive_field, LayerSpec};
use fsdn::synthetic::{scene, uniform_noise};
use fsdn::training::{train_dual, Execution, NetworkKind, TrainConfig, TrainOutcome, TrainingImages};
use fsdn::{Dims, ImageGray, MappingMode, Network, NetworkSpec, Plane, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;
const CASES: usize = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

fn conv_case(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = rng.random_range(1..=2);
    let ic = [1, 2, 3, 8, 9][rng.random_range(0..5)];
    let oc = [1, 2, 8, 10][rng.random_range(0..4)];
    let k = [1, 3, 3, 5][rng.random_range(0..4)];
    let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let pad = (k - 1) / 2;
    let x = randn(rng, Dims::new(n, ic, h, w));
    let wt = randn(rng, Dims::new(oc, ic, k, k));
    let b = randn_vec(rng, oc);
    let y = conv2d_forward(&x, &wt, &b, pad).unwrap();
    let up = randn(rng, y.dims());
    let fwd_err = rel_err(y.data(), brute_conv(&x, &wt, &b, pad).data());

    let g = conv2d_backward(&x, &wt, &up, pad).unwrap();
    let f = |x: &Tensor4<f64>, wt: &Tensor4<f64>, b: &[f64]| dot(conv2d_forward(x, wt, b, pad).unwrap().data(), up.data());
    let num_x = finite_diff(x.data(), STEP, |v| f(&Tensor4::from_vec(x.dims(), v.to_vec()).unwrap(), &wt, &b));
    let num_w = finite_diff(wt.data(), STEP, |v| f(&x, &Tensor4::from_vec(wt.dims(), v.to_vec()).unwrap(), &b));
    let num_b = finite_diff(&b, STEP, |v| f(&x, &wt, v));
    let grad_err = worst([
        rel_err(g.input.as_ref().unwrap().data(), &num_x),
        rel_err(g.weight.data(), &num_w),
        rel_err(&g.bias, &num_b),
    ]);
    (fwd_err, grad_err)
}

fn bn_case(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let d = Dims::new(rng.random_range(2..=4), rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(2..=4));
    let x = randn(rng, d);
    let gamma: Vec<f64> = randn_vec(rng, d.c).iter().map(|v| 1.0 + 0.3 * v).collect();
    let beta = randn_vec(rng, d.c);
    let up = randn(rng, d);
    let run = |x: &Tensor4<f64>, g: &[f64], b: &[f64]| {
        let mut st = BatchNormState::new(d.c);
        batchnorm_forward_train(x, g, b, &mut st).unwrap()
    };
    let (y, cache) = run(&x, &gamma, &beta);
    let fwd_err = rel_err(y.data(), brute_batchnorm(&x, &gamma, &beta, DEFAULT_EPSILON).data());
    let g = batchnorm_backward(&up, &cache, &gamma).unwrap();
    let f = |x: &Tensor4<f64>, g: &[f64], b: &[f64]| dot(run(x, g, b).0.data(), up.data());
    let num_x = finite_diff(x.data(), STEP, |v| f(&Tensor4::from_vec(d, v.to_vec()).unwrap(), &gamma, &beta));
    let num_g = finite_diff(&gamma, STEP, |v| f(&x, v, &beta));
    let num_b = finite_diff(&beta, STEP, |v| f(&x, &gamma, v));
    let grad_err = worst([rel_err(g.input.data(), &num_x), rel_err(&g.gamma, &num_g), rel_err(&g.beta, &num_b)]);
    (fwd_err, grad_err)
}

fn relu_case(rng: &mut ChaCha8Rng) -> f64 {
    let d = Dims::new(rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
    // Keep every entry well away from the kink.
    let x = randn(rng, d).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
    let up = randn(rng, d);
    let g = relu_backward(&x, &up).unwrap();
    let num = finite_diff(x.data(), STEP, |v| dot(relu_forward(&Tensor4::from_vec(d, v.to_vec()).unwrap()).data(), up.data()));
    rel_err(g.data(), &num)
}

fn mse_case(rng: &mut ChaCha8Rng) -> f64 {
    let d = Dims::new(rng.random_range(1..=3), 1, rng.random_range(1..=6), rng.random_range(1..=6));
    let (p, t) = (randn(rng, d), randn(rng, d));
    let (_, g) = mse_loss(&p, &t).unwrap();
    let num = finite_diff(p.data(), STEP, |v| mse_loss(&Tensor4::from_vec(d, v.to_vec()).unwrap(), &t).unwrap().0);
    rel_err(g.data(), &num)
}

fn set_params(net: &mut Network<f64>, flat: &[f64]) {
    let mut at = 0;
    for p in net.params_mut() {
        let n = p.values.len();
        p.values.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

fn network_case(rng: &mut ChaCha8Rng) -> f64 {
    let first = [3, 5][rng.random_range(0..2)];
    let width = [3, 8][rng.random_range(0..2)];
    let spec = NetworkSpec::dncnn_with_width("probe", 3, first, width, MappingMode::Direct).unwrap();
    let mut net = Network::<f64>::build(&spec, rng.random()).unwrap();
    net.set_mode(Mode::Train);
    // Nonzero BN shift so ReLUs see both signs.
    let flat: Vec<f64> = net.flat_params().iter().map(|v| v + 0.05 * rng.random::<f64>()).collect();
    set_params(&mut net, &flat);
    let d = Dims::new(2, 1, rng.random_range(4..=7), rng.random_range(4..=7));
    let input = randn(rng, d);
    let (out, trace) = net.forward_train(&input).unwrap();
    let up = randn(rng, out.dims());
    let analytic: Vec<f64> = net.backward(&trace, &up).unwrap().tensors.concat();
    let mut probe = net.clone();
    let num = finite_diff(&flat, STEP, |v| {
        set_params(&mut probe, v);
        dot(probe.forward(&input).unwrap().data(), up.data())
    });
    rel_err(&analytic, &num)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1D0);
    let conv: Vec<(f64, f64)> = (0..CASES).map(|_| conv_case(&mut rng)).collect();
    let bn: Vec<(f64, f64)> = (0..CASES).map(|_| bn_case(&mut rng)).collect();
    let relu = worst((0..CASES).map(|_| relu_case(&mut rng)));
    let mse = worst((0..CASES).map(|_| mse_case(&mut rng)));
    let net = worst((0..CASES).map(|_| network_case(&mut rng)));
    let conv_fwd = worst(conv.iter().map(|c| c.0));
    let conv_grad = worst(conv.iter().map(|c| c.1));
    let bn_fwd = worst(bn.iter().map(|c| c.0));
    let bn_grad = worst(bn.iter().map(|c| c.1));
    let elapsed = start.elapsed();
    let ok = [conv_grad, bn_grad, relu, mse, net].iter().all(|&e| e < GRAD_TOL)
        && conv_fwd < 1e-12
        && bn_fwd < 1e-12
        && elapsed < Duration::from_secs(60);
    check(
        ok,
        format!(
            "{CASES} cases each, max rel err conv {conv_grad:.1e} bn {bn_grad:.1e} relu {relu:.1e} mse {mse:.1e} \
             depth-3 net {net:.1e} (tol {GRAD_TOL:.0e}); forward vs direct sums conv {conv_fwd:.1e} bn {bn_fwd:.1e}; \
             {:.1} s of 60 s",
            elapsed.as_secs_f64()
        ),
    )
}

fn recomposition_error(img: &ImageGray) -> f32 {
    let pair = decompose(img, DEFAULT_BLUR_SIGMA).unwrap();
    let back = recombine(&pair).unwrap();
    let summed: Vec<f32> = pair.low.data().iter().zip(pair.high.data()).map(|(a, b)| a + b).collect();
    max_abs_diff(back.data(), img.data()).max(max_abs_diff(&summed, img.data()))
}

fn criterion_recomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEC0);
    let random: Vec<ImageGray> = (0..24)
        .map(|i| {
            let (w, h) = (rng.random_range(1..=90), rng.random_range(1..=90));
            if i % 2 == 0 {
                uniform_noise(w, h, rng.random())
            } else {
                scene(w, h, rng.random(), 0.0, 1.0)
            }
        })
        .collect();
    let natural = natural_images();
    let rand_err = random.iter().map(recomposition_error).fold(0.0, f32::max);
    let nat_err = natural.iter().map(|(_, im)| recomposition_error(im)).fold(0.0, f32::max);
    let const_high = [0.0f32, 0.37, 1.0]
        .iter()
        .flat_map(|&c| [(40, 30), (7, 93), (1, 1)].map(move |(w, h)| (c, w, h)))
        .map(|(c, w, h)| {
            let pair = decompose(&Plane::filled(w, h, c), DEFAULT_BLUR_SIGMA).unwrap();
            pair.high.data().iter().map(|v| v.abs()).fold(0.0, f32::max)
        })
        .fold(0.0, f32::max);
    let ok = random.len() >= 20 && natural.len() >= 5 && rand_err <= 1e-6 && nat_err <= 1e-6 && const_high <= 1e-6;
    check(
        ok,
        format!(
            "max |low + high - x|: {} random {rand_err:.1e}, {} natural {nat_err:.1e}; constant-image max |high| {const_high:.1e} (limit 1e-6)",
            random.len(),
            natural.len()
        ),
    )
}

fn criterion_metrics() -> Outcome {
    let x = scene(96, 80, 11, 0.1, 0.8);
    let cap = psnr(&x, &x).unwrap();
    let shifted = x.map(|v| v + 16.0 / 255.0);
    let p16 = psnr(&x, &shifted).unwrap();
    let s_self = ssim(&x, &x).unwrap();
    let identity: Vec<f64> = (0..10)
        .map(|i| {
            let clean = scene(256, 256, 100 + i, 0.25, 0.75);
            let noisy = add_awgn(&clean, 25.0, 7_000 + i).unwrap().noisy;
            psnr(&clean, &noisy).unwrap()
        })
        .collect();
    let mean_id = identity.iter().sum::<f64>() / identity.len() as f64;
    let ok = cap == PSNR_CAP_DB && (p16 - 24.0485).abs() <= 1e-3 && (s_self - 1.0).abs() <= 1e-9 && (mean_id - 20.17).abs() <= 0.15;
    check(
        ok,
        format!(
            "psnr(x,x) {cap} (cap {PSNR_CAP_DB}); 16/255 shift {p16:.4} dB (24.0485 +- 0.001); ssim(x,x) 1{:+.1e}; \
             identity at sigma 25 on 10 images 256x256 {mean_id:.3} dB (20.17 +- 0.15)",
            s_self - 1.0
        ),
    )
}

/// `(conv kernel sizes, BN after each conv)` read off the layer list.
fn conv_layout(spec: &NetworkSpec) -> (Vec<usize>, Vec<bool>) {
    let mut kernels = Vec::new();
    let mut bn = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        if let LayerSpec::Conv { kernel_size, .. } = *l {
            kernels.push(kernel_size);
            bn.push(matches!(spec.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. })));
        }
    }
    (kernels, bn)
}

fn criterion_architecture() -> Outcome {
    let cases = [
        (NetworkKind::LowFreq, 17, 5, MappingMode::Direct, 37, 50, 128),
        (NetworkKind::HighFreq, 20, 3, MappingMode::Direct, 41, 70, 64),
        (NetworkKind::BaselineSingle, 17, 3, MappingMode::Residual, 35, 40, 128),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, depth, first, mapping, rf, patch, batch) in cases {
        let spec = kind.canonical_spec();
        let cfg = TrainConfig::defaults(kind);
        let (kernels, bn) = conv_layout(&spec);
        let bn_ok = !bn[0] && !bn[depth - 1] && bn[1..depth - 1].iter().all(|&b| b);
        let kernels_ok = kernels[0] == first && kernels[1..].iter().all(|&k| k == 3);
        let got_rf = receptive_field(&spec);
        let this = kernels.len() == depth
            && kernels_ok
            && bn_ok
            && spec.mapping_mode == mapping
            && got_rf == rf
            && cfg.patch_size == patch
            && cfg.minibatch == batch
            && cfg.patch_size > got_rf
            && cfg.spec().unwrap() == spec;
        ok &= this;
        parts.push(format!(
            "{} {} convs first {}x{} {} rf {got_rf} patch {} batch {} params {}",
            spec.name,
            kernels.len(),
            kernels[0],
            kernels[0],
            spec.mapping_mode,
            cfg.patch_size,
            cfg.minibatch,
            parameter_count(&spec)
        ));
    }
    check(ok, parts.join("; "))
}

fn toy_config(kind: NetworkKind, depth: usize, patches: usize, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::defaults(kind);
    c.sigma255 = 25.0;
    c.depth_override = Some(depth);
    c.patches_per_network = patches;
    c.epochs = epochs;
    c
}

const HELD_OUT: [&str; 3] = ["camera", "coffee", "gravel"];

fn criterion_toy_training() -> Outcome {
    let start = Instant::now();
    let (train, test): (Vec<_>, Vec<_>) = natural_images()
        .into_iter()
        .partition(|(name, _)| !HELD_OUT.iter().any(|h| name.starts_with(h)));
    let low_cfg = toy_config(NetworkKind::LowFreq, 5, 2000, 5);
    let high_cfg = toy_config(NetworkKind::HighFreq, 5, 2000, 5);
    let (labels, clean): (Vec<String>, Vec<ImageGray>) = train.into_iter().unzip();
    let n_train = labels.len();
    let images = TrainingImages::from_images(labels, clean, 25.0, low_cfg.blur_sigma, low_cfg.seed).map_err(|e| e.to_string())?;
    let (low, high) = train_dual(&low_cfg, &high_cfg, &images, Execution::Concurrent).map_err(|e| e.to_string())?;
    let models = Models::Dual {
        low: LoadedModel::from_network("low", low.checkpoint.network.clone()),
        high: LoadedModel::from_network("high", high.checkpoint.network.clone()),
    };
    let held: Vec<(String, fsdn::Result<ImageGray>)> = test.into_iter().map(|(n, im)| (n, Ok(im))).collect();
    let report = evaluate_images(&held, 25.0, &models, 99).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let gain = report.mean_psnr_db - report.mean_noisy_psnr_db;
    let losses = |o: &TrainOutcome| (o.epochs.first().unwrap().mean_loss, o.epochs.last().unwrap().mean_loss);
    let (l0, l1) = losses(&low);
    let (h0, h1) = losses(&high);
    let ok = n_train >= 10
        && report.evaluated() >= 5
        && gain >= 2.0
        && l1 < l0
        && h1 < h0
        && elapsed < Duration::from_secs(15 * 60);
    check(
        ok,
        format!(
            "{n_train} train / {} held-out images: noisy {:.2} dB -> dual {:.2} dB (gain {gain:.2}, need 2.00); \
             low loss {l0:.3e} -> {l1:.3e}, high loss {h0:.3e} -> {h1:.3e}; {:.1} min of 15 min",
            report.evaluated(),
            report.mean_noisy_psnr_db,
            report.mean_psnr_db,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn trajectory_bits(o: &TrainOutcome) -> Vec<u64> {
    o.epochs.iter().flat_map(|e| [e.lr.to_bits(), e.mean_loss.to_bits()]).collect()
}

fn criterion_determinism() -> Outcome {
    let scenes: Vec<ImageGray> = (0..4).map(|i| scene(96, 96, 40 + i, 0.0, 1.0)).collect();
    let labels = (0..4).map(|i| format!("scene{i}")).collect();
    let low_cfg = toy_config(NetworkKind::LowFreq, 3, 160, 2);
    let high_cfg = toy_config(NetworkKind::HighFreq, 3, 96, 2);
    let images = TrainingImages::from_images(labels, scenes, 25.0, low_cfg.blur_sigma, low_cfg.seed).map_err(|e| e.to_string())?;
    let run = |ex| train_dual(&low_cfg, &high_cfg, &images, ex).map_err(|e| e.to_string());
    let a = run(Execution::Sequential)?;
    let b = run(Execution::Sequential)?;
    let c = run(Execution::Concurrent)?;
    let same = |x: &(TrainOutcome, TrainOutcome), y: &(TrainOutcome, TrainOutcome)| {
        trajectory_bits(&x.0) == trajectory_bits(&y.0)
            && trajectory_bits(&x.1) == trajectory_bits(&y.1)
            && encode(&x.0.checkpoint) == encode(&y.0.checkpoint)
            && encode(&x.1.checkpoint) == encode(&y.1.checkpoint)
    };
    let repeat = same(&a, &b);
    let concurrent = same(&a, &c);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let probe = scene(61, 47, 5, 0.0, 1.0).to_tensor();
    let mut round_trip = true;
    for (name, ckpt) in [("low", &a.0.checkpoint), ("high", &a.1.checkpoint)] {
        let path = dir.path().join(format!("{name}.fsdn"));
        save_checkpoint(ckpt, &path).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let mut before = ckpt.network.clone();
        let mut after = loaded.network.clone();
        before.set_mode(Mode::Inference);
        after.set_mode(Mode::Inference);
        let (yb, ya) = (before.infer(&probe).unwrap(), after.infer(&probe).unwrap());
        let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        round_trip &= encode(&loaded) == encode(ckpt) && bits(&yb) == bits(&ya);
    }
    check(
        repeat && concurrent && round_trip,
        format!(
            "repeat run bitwise equal: {repeat}; sequential vs concurrent equal: {concurrent}; \
             save/load forward outputs bitwise equal: {round_trip}"
        ),
    )
}

fn main() -> ExitCode {
    fsdn::tensor::retain_large_allocations();
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("gradient correctness", criterion_gradients),
        ("recomposition identity", criterion_recomposition),
        ("metric oracles", criterion_metrics),
        ("architecture conformance", criterion_architecture),
        ("toy end-to-end training", criterion_toy_training),
        ("determinism and round trip", criterion_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!("acceptance criteria");
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id} {name}: PASS ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({secs:.1} s) {detail}");
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
