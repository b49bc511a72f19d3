use cenc_core::layers::{channelwise_weight_count, ConvSpec};
use cenc_core::model::{build_discriminator, build_generator, BottleneckKind, LayerKind};
use cenc_core::{GeneratorConfig, MaskConfig, MaskKind, Mode, Network, RngState, Shape, Tensor};

fn config(size: usize, base: usize) -> GeneratorConfig {
    GeneratorConfig {
        image_size: size,
        base_channels: base,
        mask: MaskConfig::central_for(size),
        ..GeneratorConfig::default()
    }
}

/// Input gradient of one output element (one-hot upstream gradient).
fn input_sensitivity(net: &mut Network, x: &Tensor, out_index: usize) -> Tensor {
    let y = net.forward(x, Mode::Train, &mut RngState::new(0)).unwrap();
    let mut dy = Tensor::zeros(y.shape());
    dy.data_mut()[out_index] = 1.0;
    net.zero_grad();
    net.backward(&dy).unwrap()
}

#[test]
fn channelwise_plus_pointwise_conv_mixes_every_input() {
    let (m, n) = (3, 4);
    let kinds = vec![
        LayerKind::ChannelwiseFc { channels: m, size: n },
        LayerKind::Conv { spec: ConvSpec::square(m, m, 1, 1, 0).unwrap() },
    ];
    let mut net = Network::build("mix", kinds, Shape::new(1, m, n, n), None, &mut RngState::new(1)).unwrap();
    let x = RngState::new(2).uniform([1, m, n, n], -1.0, 1.0).unwrap();
    for out in 0..m * n * n {
        let dx = input_sensitivity(&mut net, &x, out);
        assert!(dx.data().iter().all(|&g| g != 0.0), "output {out} ignores some input");
    }
}

#[test]
fn channelwise_alone_has_zero_cross_channel_gradient() {
    let (m, n) = (3, 4);
    let kinds = vec![LayerKind::ChannelwiseFc { channels: m, size: n }];
    let mut net = Network::build("iso", kinds, Shape::new(1, m, n, n), None, &mut RngState::new(1)).unwrap();
    let x = RngState::new(2).uniform([1, m, n, n], -1.0, 1.0).unwrap();
    for out in 0..m * n * n {
        let c = out / (n * n);
        let dx = input_sensitivity(&mut net, &x, out);
        for (i, &g) in dx.data().iter().enumerate() {
            if i / (n * n) == c {
                assert_ne!(g, 0.0, "output {out} ignores its own map");
            } else {
                assert_eq!(g, 0.0, "output {out} sees map {}", i / (n * n));
            }
        }
    }
}

#[test]
fn generator_output_depends_on_far_context() {
    let mut gen = build_generator(&config(32, 4), &mut RngState::new(3)).unwrap();
    let x = RngState::new(4).uniform([2, 3, 32, 32], 0.0, 1.0).unwrap();
    // top-left predicted pixel against the bottom-right input corner
    let dx = input_sensitivity(&mut gen, &x, 0);
    let corner: Vec<f64> = (0..3).map(|c| dx.get(0, c, 31, 31)).collect();
    assert!(corner.iter().any(|&g| g != 0.0), "{corner:?}");
}

#[test]
fn pooling_variant_keeps_output_shape() {
    for size in [32, 64] {
        for bottleneck in [BottleneckKind::Channelwise, BottleneckKind::Linear] {
            for kind in [MaskKind::Central, MaskKind::RandomRegion] {
                let mut cfg = config(size, 4);
                cfg.bottleneck = bottleneck;
                cfg.bottleneck_units = 32;
                cfg.mask.kind = kind;
                let a = build_generator(&cfg, &mut RngState::new(0)).unwrap();
                cfg.pool_free = false;
                let b = build_generator(&cfg, &mut RngState::new(0)).unwrap();
                assert_eq!(a.output_shape(3).unwrap(), b.output_shape(3).unwrap());
                let expect = if kind == MaskKind::Central { size / 2 } else { size };
                assert_eq!(a.output_shape(1).unwrap(), Shape::new(1, 3, expect, expect));
            }
        }
    }
}

#[test]
fn accepted_configs_forward_any_batch() {
    for pool_free in [true, false] {
        let mut cfg = config(32, 4);
        cfg.pool_free = pool_free;
        let mut gen = build_generator(&cfg, &mut RngState::new(0)).unwrap();
        let mut disc = build_discriminator(&cfg, &mut RngState::new(1)).unwrap();
        for n in 1..5 {
            let x = RngState::new(n as u64).uniform([n, 3, 32, 32], 0.0, 1.0).unwrap();
            let y = gen.forward(&x, Mode::Eval, &mut RngState::new(0)).unwrap();
            assert_eq!(y.shape(), Shape::new(n, 3, 16, 16));
            let d = disc.forward(&y, Mode::Eval, &mut RngState::new(0)).unwrap();
            assert_eq!(d.shape(), Shape::new(n, 1, 1, 1));
            if n > 1 {
                gen.forward(&x, Mode::Train, &mut RngState::new(0)).unwrap();
            }
        }
    }
}

#[test]
fn fresh_discriminator_is_undecided() {
    let mut cfg = config(64, 8);
    cfg.mask.patch = 32;
    let mut disc = build_discriminator(&cfg, &mut RngState::new(11)).unwrap();
    let x = RngState::new(12).uniform([256, 3, 32, 32], 0.0, 1.0).unwrap();
    let d = disc.forward(&x, Mode::Eval, &mut RngState::new(0)).unwrap();
    assert!(d.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let mean = d.mean();
    assert!(mean > 0.3 && mean < 0.7, "mean output {mean}");
}

#[test]
fn bottleneck_weight_count_follows_map_count() {
    let cfg = config(64, 32);
    let gen = build_generator(&cfg, &mut RngState::new(0)).unwrap();
    let cw = gen
        .layers()
        .iter()
        .find(|l| matches!(l.kind, LayerKind::ChannelwiseFc { .. }))
        .expect("channelwise bottleneck");
    let m = cfg.bottleneck_channels();
    assert_eq!(m, 256);
    assert_eq!(cw.params.as_ref().unwrap().weight.numel(), m * 4usize.pow(4));
    assert_eq!(channelwise_weight_count(m, 4), 65_536);
}

#[test]
fn invalid_configs_rejected() {
    let mut rng = RngState::new(0);
    let mut bad = config(48, 4);
    bad.mask = MaskConfig::central_for(32);
    assert!(build_generator(&bad, &mut rng).is_err());
    let mut bad = config(32, 4);
    bad.mask.patch = 12;
    assert!(build_generator(&bad, &mut rng).is_err());
    let bad = config(32, 0);
    assert!(build_generator(&bad, &mut rng).is_err());
}
