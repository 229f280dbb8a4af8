use fsdn::network::{Gradients, ParamKind};
use fsdn::synthetic::scene;
use fsdn::training::{
    clip_scale, lr_schedule, parse_kv, sgd_update, train_on, LrSchedule, NetworkKind, Sgd, SgdParams, TrainConfig,
    TrainingImages, CONFIG_KEYS,
};
use fsdn::{MappingMode, Network, NetworkSpec};
use proptest::prelude::*;

#[test]
fn single_step_without_momentum() {
    let (mut w, mut v) = ([1.0f64], [0.0f64]);
    sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.0, 0.0, 1.0);
    assert!((w[0] - 0.9).abs() < 1e-15);
}

#[test]
fn two_momentum_steps_by_hand() {
    let (mut w, mut v) = ([0.0f64], [0.0f64]);
    sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0, 1.0);
    assert!((w[0] + 0.1).abs() < 1e-15);
    sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0, 1.0);
    assert!((v[0] + 0.19).abs() < 1e-15);
    assert!((w[0] + 0.29).abs() < 1e-15);
}

#[test]
fn clipping_scales_to_the_limit() {
    assert_eq!(clip_scale(3.0, Some(5.0)), 1.0);
    assert!((clip_scale(10.0, Some(5.0)) - 0.5).abs() < 1e-15);
    assert_eq!(clip_scale(1e9, None), 1.0);
}

#[test]
fn schedule_is_log_spaced_between_the_endpoints() {
    let c = TrainConfig::defaults(NetworkKind::LowFreq);
    assert_eq!(c.epochs, 15);
    let lrs: Vec<f64> = (1..=15).map(|e| lr_schedule(e, &c).unwrap()).collect();
    assert!((lrs[0] - 0.1).abs() < 1e-15);
    assert!((lrs[14] - 1e-4).abs() < 1e-15);
    let ratio = lrs[1] / lrs[0];
    for pair in lrs.windows(2) {
        assert!((pair[1] / pair[0] - ratio).abs() < 1e-12);
    }
    assert!((ratio - 10f64.powf(-3.0 / 14.0)).abs() < 1e-12);
    assert!(lr_schedule(0, &c).is_err());
    assert!(lr_schedule(16, &c).is_err());
}

#[test]
fn equal_endpoints_give_a_constant_schedule() {
    let mut c = TrainConfig::defaults(NetworkKind::HighFreq);
    c.lr_end = c.lr_start;
    for e in 1..=c.epochs {
        assert_eq!(lr_schedule(e, &c).unwrap(), c.lr_start);
    }
    c.lr_schedule = LrSchedule::Linear;
    c.lr_end = 0.05;
    c.epochs = 3;
    assert!((lr_schedule(2, &c).unwrap() - 0.075).abs() < 1e-15);
}

#[test]
fn defaults_follow_the_network_kind() {
    let low = TrainConfig::defaults(NetworkKind::LowFreq);
    let high = TrainConfig::defaults(NetworkKind::HighFreq);
    let single = TrainConfig::defaults(NetworkKind::BaselineSingle);
    assert_eq!((low.patch_size, low.minibatch), (50, 128));
    assert_eq!((high.patch_size, high.minibatch), (70, 64));
    assert_eq!((single.patch_size, single.minibatch), (40, 128));
    for c in [&low, &high, &single] {
        assert_eq!(c.patches_per_network, 90_000);
        assert_eq!((c.lr_start, c.lr_end, c.momentum, c.weight_decay), (0.1, 1e-4, 0.9, 1e-4));
        assert_eq!(c.grad_clip_norm, Some(5.0));
        assert_eq!(c.blur_sigma, 4.5);
    }
    assert_eq!(single.mapping_mode, MappingMode::Residual);
    assert_eq!(low.mapping_mode, MappingMode::Direct);
}

#[test]
fn config_text_round_trips_every_key() {
    let mut c = TrainConfig::defaults(NetworkKind::HighFreq);
    c.depth_override = Some(7);
    c.grad_clip_norm = None;
    c.seed = 99;
    let text = c.to_kv_text();
    let pairs = parse_kv(&text).unwrap();
    assert_eq!(pairs.len(), CONFIG_KEYS.len());
    let mut back = TrainConfig::defaults(NetworkKind::HighFreq);
    back.seed = 1;
    back.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_parsing_rejects_bad_input() {
    assert!(parse_kv("epochs 5").is_err());
    assert!(parse_kv("epochs = 5\nepochs = 6").is_err());
    assert!(parse_kv(" = 5").is_err());
    assert_eq!(parse_kv("# c\n\n epochs = 5 # trailing\n").unwrap(), vec![("epochs".into(), "5".into())]);
    let mut c = TrainConfig::defaults(NetworkKind::LowFreq);
    assert!(c.set("no_such_key", "1").is_err());
    assert!(c.set("epochs", "many").is_err());
    c.lr_end = 1.0;
    assert!(c.validate().is_err());
}

#[test]
fn weight_decay_touches_conv_weights_only() {
    let spec = NetworkSpec::dncnn_with_width("d", 3, 3, 4, MappingMode::Direct).unwrap();
    let mut net = Network::<f64>::build(&spec, 1).unwrap();
    for p in net.params_mut() {
        if p.kind != ParamKind::ConvWeight {
            p.values.iter_mut().for_each(|v| *v = 0.5);
        }
    }
    let before: Vec<(ParamKind, Vec<f64>)> = net.params_mut().into_iter().map(|p| (p.kind, p.values.to_vec())).collect();
    let zero = Gradients { tensors: before.iter().map(|(_, v)| vec![0.0; v.len()]).collect() };
    let mut sgd = Sgd::new(&mut net);
    let params = SgdParams { momentum: 0.9, weight_decay: 0.01, grad_clip_norm: Some(5.0) };
    sgd.step(&mut net, &zero, 0.1, params).unwrap();
    for ((kind, old), p) in before.iter().zip(net.params_mut()) {
        for (a, b) in old.iter().zip(p.values.iter()) {
            let expected = if *kind == ParamKind::ConvWeight { a * (1.0 - 0.1 * 0.01) } else { *a };
            assert!((b - expected).abs() < 1e-15, "{kind:?}");
        }
    }
}

#[test]
fn clipped_step_has_the_clip_norm() {
    let spec = NetworkSpec::dncnn_with_width("d", 2, 3, 2, MappingMode::Direct).unwrap();
    let mut net = Network::<f64>::build(&spec, 3).unwrap();
    let before = net.flat_params();
    let grads = Gradients { tensors: net.params_mut().iter().map(|p| vec![100.0; p.values.len()]).collect() };
    let mut sgd = Sgd::new(&mut net);
    let norm = sgd.step(&mut net, &grads, 1.0, SgdParams { momentum: 0.0, weight_decay: 0.0, grad_clip_norm: Some(5.0) }).unwrap();
    assert!((norm - 100.0 * (before.len() as f64).sqrt()).abs() < 1e-9);
    let moved: f64 = net.flat_params().iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!((moved - 5.0).abs() < 1e-12);
}

#[test]
fn short_run_reduces_the_loss() {
    let clean: Vec<_> = (0..4).map(|i| scene(64, 64, i, 0.0, 1.0)).collect();
    let labels = (0..4).map(|i| format!("s{i}")).collect();
    let mut c = TrainConfig::defaults(NetworkKind::BaselineSingle);
    c.depth_override = Some(3);
    c.patches_per_network = 256;
    c.minibatch = 16;
    c.epochs = 4;
    c.sigma255 = 25.0;
    // Momentum carries lr 0.1 steps across the decay; a short run needs a small constant rate.
    c.lr_start = 0.01;
    c.lr_end = 0.01;
    let images = TrainingImages::from_images(labels, clean, c.sigma255, c.blur_sigma, c.seed).unwrap();
    let out = train_on(&c, &images).unwrap();
    assert_eq!(out.epochs.len(), 4);
    for pair in out.epochs.windows(2) {
        assert!(pair[1].mean_loss < pair[0].mean_loss, "{:?}", out.epochs);
    }
    assert!(out.epochs[3].mean_loss < 0.2 * out.epochs[0].mean_loss, "{:?}", out.epochs);
    assert_eq!(out.checkpoint.meta.epoch, 4);
    assert!(out.epoch_csv().starts_with("epoch,lr,mean_loss\n"));
}

#[test]
fn mismatched_image_preparation_is_rejected() {
    let clean = vec![scene(64, 64, 0, 0.0, 1.0)];
    let images = TrainingImages::from_images(vec!["a".into()], clean, 25.0, 4.5, 1).unwrap();
    let mut c = TrainConfig::defaults(NetworkKind::LowFreq);
    c.seed = 2;
    c.sigma255 = 25.0;
    assert!(train_on(&c, &images).is_err());
}

proptest! {
    #[test]
    fn momentum_steps_match_the_closed_form(g in -3.0f64..3.0, lr in 1e-4f64..0.5, mu in 0.0f64..0.99, steps in 1usize..8) {
        // Constant gradient: v_k = −lr·g·(1 − μ^k)/(1 − μ), w_k = Σ v_j.
        let (mut w, mut v) = ([0.0f64], [0.0f64]);
        let mut expected_w = 0.0;
        for k in 1..=steps {
            sgd_update(&mut w, &[g], &mut v, lr, mu, 0.0, 1.0);
            let vk = -lr * g * (1.0 - mu.powi(k as i32)) / (1.0 - mu);
            expected_w += vk;
            prop_assert!((v[0] - vk).abs() < 1e-12);
        }
        prop_assert!((w[0] - expected_w).abs() < 1e-12);
    }

    #[test]
    fn clip_never_exceeds_the_limit(norm in 0.0f64..1e6, clip in 1e-3f64..100.0) {
        prop_assert!(norm * clip_scale(norm, Some(clip)) <= clip * (1.0 + 1e-12));
    }
}
