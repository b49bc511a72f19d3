//! Shared fixtures for the criterion benches.

use cenc_core::dataio::synthetic_images;
use cenc_core::layers::ConvSpec;
use cenc_core::{GeneratorConfig, LayerParams, LossMode, MaskConfig, RngState, Shape, Tensor, TrainConfig, Trainer};

/// Uniform `[-1, 1]` tensor from a fixed seed.
pub fn random(shape: impl Into<Shape>, seed: u64) -> Tensor {
    RngState::new(seed).uniform(shape, -1.0, 1.0).expect("non-empty shape")
}

/// A 4x4 stride-2 pad-1 convolution, the shape used throughout the encoder.
pub fn down_conv(batch: usize, cin: usize, cout: usize, size: usize) -> (Tensor, LayerParams, ConvSpec) {
    let spec = ConvSpec::square(cin, cout, 4, 2, 1).expect("valid spec");
    let params = LayerParams::new(
        "down",
        random(spec.conv_weight_shape(), 1),
        Some(random(spec.bias_shape(), 2)),
    );
    (random([batch, cin, size, size], 3), params, spec)
}

/// The decoder's mirror of [`down_conv`]: doubles the spatial size.
pub fn up_conv(batch: usize, cin: usize, cout: usize, size: usize) -> (Tensor, LayerParams, ConvSpec) {
    let spec = ConvSpec::square(cin, cout, 4, 2, 1).expect("valid spec");
    let params = LayerParams::new(
        "up",
        random(spec.transposed_weight_shape(), 1),
        Some(random(spec.bias_shape(), 2)),
    );
    (random([batch, cin, size, size], 3), params, spec)
}

/// Trainer and data for a 32 px, base-8 central-mask run.
pub fn small_trainer(mode: LossMode, batch: usize) -> (Trainer, Tensor) {
    let gen_cfg = GeneratorConfig {
        image_size: 32,
        base_channels: 8,
        mask: MaskConfig::central_for(32),
        ..GeneratorConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: batch,
        loss_mode: mode,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(gen_cfg, cfg, [0.5; 3]).expect("valid config");
    (trainer, synthetic_images(batch, 32, 0))
}
