//! Generator (encoder, channel-wise bottleneck, decoder) and discriminator
//! builders on top of a generic layer stack.

mod network;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, ConvSpec, Mode};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub use crate::masking::MaskKind;
pub use network::{Layer, LayerKind, Network};

/// Spatial extent of the encoder output feeding the bottleneck.
pub const BOTTLENECK_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckKind {
    /// Per-channel dense map over the 4x4 features, then a 1x1 convolution.
    Channelwise,
    /// Fully connected layer to `bottleneck_units` and back.
    Linear,
}

impl std::str::FromStr for BottleneckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channelwise" => Ok(BottleneckKind::Channelwise),
            "linear" => Ok(BottleneckKind::Linear),
            other => Err(Error::InvalidArgument(format!("unknown bottleneck {other:?}"))),
        }
    }
}

/// Which region the generator predicts and how it is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub kind: MaskKind,
    /// Side of the predicted square for central masks.
    pub patch: usize,
    /// Rim of the predicted square that overlaps the context.
    pub overlap: usize,
}

impl MaskConfig {
    /// Central mask with half-size patch and a rim of `7/128` of the image.
    pub fn central_for(image_size: usize) -> Self {
        MaskConfig {
            kind: MaskKind::Central,
            patch: image_size / 2,
            overlap: image_size * 7 / 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub bottleneck: BottleneckKind,
    /// Width of the linear bottleneck; unused by the channel-wise variant,
    /// whose width is `channels * 4 * 4`.
    pub bottleneck_units: usize,
    /// Strided convolutions everywhere instead of a leading max-pool stage.
    pub pool_free: bool,
    pub mask: MaskConfig,
    pub leaky_slope: f64,
    /// Dropout after the bottleneck (0 disables it).
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: 64,
            base_channels: 64,
            bottleneck: BottleneckKind::Channelwise,
            bottleneck_units: 512,
            pool_free: true,
            mask: MaskConfig::central_for(64),
            leaky_slope: 0.2,
            dropout: 0.0,
        }
    }
}

fn log2_exact(v: usize) -> Option<u32> {
    v.is_power_of_two().then(|| v.trailing_zeros())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return bad(format!(
                "image size must be a power of two >= 32, got {}",
                self.image_size
            ));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.bottleneck == BottleneckKind::Linear && self.bottleneck_units == 0 {
            return bad("bottleneck_units must be positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope must be in (0, 1), got {}", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.mask.kind == MaskKind::Central {
            let p = self.mask.patch;
            if p < 2 * BOTTLENECK_SIZE || p > self.image_size || !p.is_power_of_two() {
                return bad(format!(
                    "central patch must be a power of two in [8, {}], got {p}",
                    self.image_size
                ));
            }
            if 2 * self.mask.overlap >= p {
                return bad(format!("overlap {} leaves no hidden interior in patch {p}", self.mask.overlap));
            }
        }
        Ok(())
    }

    /// Side of the region the generator outputs and the discriminator sees.
    pub fn output_size(&self) -> usize {
        match self.mask.kind {
            MaskKind::Central => self.mask.patch,
            _ => self.image_size,
        }
    }

    fn encoder_stages(&self) -> u32 {
        log2_exact(self.image_size / BOTTLENECK_SIZE).expect("validated power of two")
    }

    /// Channels at the bottleneck.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << (self.encoder_stages() - 1)
    }

    /// Length of the context embedding.
    pub fn embedding_dim(&self) -> usize {
        match self.bottleneck {
            BottleneckKind::Channelwise => {
                self.bottleneck_channels() * BOTTLENECK_SIZE * BOTTLENECK_SIZE
            }
            BottleneckKind::Linear => self.bottleneck_units,
        }
    }
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<LayerKind> {
    Ok(LayerKind::Conv {
        spec: ConvSpec::square(cin, cout, k, stride, pad)?,
    })
}

fn act(a: Activation) -> LayerKind {
    LayerKind::Activation { activation: a }
}

/// Build the encoder-decoder generator. Its embedding boundary sits right
/// after the bottleneck layer.
pub fn build_generator(cfg: &GeneratorConfig, rng: &mut RngState) -> Result<Network> {
    cfg.validate()?;
    let leaky = act(Activation::leaky(cfg.leaky_slope)?);
    let mut kinds = Vec::new();

    let mut ch = 3;
    for i in 0..cfg.encoder_stages() {
        let out = cfg.base_channels << i;
        if i == 0 && !cfg.pool_free {
            kinds.push(conv(ch, out, 3, 1, 1)?);
            kinds.push(LayerKind::BatchNorm { channels: out });
            kinds.push(leaky.clone());
            kinds.push(LayerKind::MaxPool { kernel: 2, stride: 2 });
        } else {
            kinds.push(conv(ch, out, 4, 2, 1)?);
            kinds.push(LayerKind::BatchNorm { channels: out });
            kinds.push(leaky.clone());
        }
        ch = out;
    }

    let n = BOTTLENECK_SIZE;
    let embed_end;
    match cfg.bottleneck {
        BottleneckKind::Channelwise => {
            kinds.push(LayerKind::ChannelwiseFc { channels: ch, size: n });
            embed_end = kinds.len();
            if cfg.dropout > 0.0 {
                kinds.push(LayerKind::Dropout { rate: cfg.dropout });
            }
            kinds.push(conv(ch, ch, 1, 1, 0)?);
        }
        BottleneckKind::Linear => {
            kinds.push(LayerKind::Linear {
                inputs: ch * n * n,
                outputs: cfg.bottleneck_units,
            });
            embed_end = kinds.len();
            kinds.push(leaky.clone());
            if cfg.dropout > 0.0 {
                kinds.push(LayerKind::Dropout { rate: cfg.dropout });
            }
            kinds.push(LayerKind::Linear {
                inputs: cfg.bottleneck_units,
                outputs: ch * n * n,
            });
            kinds.push(LayerKind::Reshape { c: ch, h: n, w: n });
        }
    }
    kinds.push(LayerKind::BatchNorm { channels: ch });
    kinds.push(act(Activation::Relu));

    let up_stages = log2_exact(cfg.output_size() / n).expect("validated power of two");
    for j in 0..up_stages {
        let last = j + 1 == up_stages;
        let out = if last { 3 } else { (ch / 2).max(1) };
        kinds.push(LayerKind::TransposedConv {
            spec: ConvSpec::square(ch, out, 4, 2, 1)?,
        });
        if last {
            kinds.push(act(Activation::Sigmoid));
        } else {
            kinds.push(LayerKind::BatchNorm { channels: out });
            kinds.push(act(Activation::Relu));
        }
        ch = out;
    }

    let s = cfg.image_size;
    let net = Network::build("generator", kinds, Shape::new(1, 3, s, s), Some(embed_end), rng)?;
    let o = cfg.output_size();
    let got = net.output_shape(1)?;
    if got != Shape::new(1, 3, o, o) {
        return Err(Error::InvalidShape(format!(
            "generator produces {got}, expected (1, 3, {o}, {o})"
        )));
    }
    Ok(net)
}

/// Build the discriminator over the generator's output region.
pub fn build_discriminator(cfg: &GeneratorConfig, rng: &mut RngState) -> Result<Network> {
    cfg.validate()?;
    let leaky = act(Activation::leaky(cfg.leaky_slope)?);
    let size = cfg.output_size();
    let stages = log2_exact(size / BOTTLENECK_SIZE).expect("validated power of two");
    let mut kinds = Vec::new();
    let mut ch = 3;
    for i in 0..stages {
        let out = cfg.base_channels << i;
        kinds.push(conv(ch, out, 4, 2, 1)?);
        if i > 0 {
            kinds.push(LayerKind::BatchNorm { channels: out });
        }
        kinds.push(leaky.clone());
        ch = out;
    }
    kinds.push(conv(ch, 1, BOTTLENECK_SIZE, 1, 0)?);
    kinds.push(act(Activation::Sigmoid));
    let net = Network::build("discriminator", kinds, Shape::new(1, 3, size, size), None, rng)?;
    debug_assert_eq!(net.output_shape(1)?, Shape::new(1, 1, 1, 1));
    Ok(net)
}

/// Generator prediction for a mean-filled input.
pub fn generator_forward(
    gen: &mut Network,
    masked: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Tensor> {
    gen.forward(masked, mode, rng)
}

/// Real-probabilities, shape `(N, 1, 1, 1)`.
pub fn discriminator_forward(
    disc: &mut Network,
    region: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Tensor> {
    disc.forward(region, mode, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: MaskKind) -> GeneratorConfig {
        GeneratorConfig {
            image_size: 32,
            base_channels: 4,
            mask: MaskConfig {
                kind,
                patch: 16,
                overlap: 2,
            },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_shapes() {
        let cfg = GeneratorConfig::default();
        let mut rng = RngState::new(0);
        let g = build_generator(&cfg, &mut rng).unwrap();
        assert_eq!(g.output_shape(2).unwrap(), Shape::new(2, 3, 32, 32));
        let d = build_discriminator(&cfg, &mut rng).unwrap();
        assert_eq!(d.output_shape(2).unwrap(), Shape::new(2, 1, 1, 1));
        let full = GeneratorConfig {
            mask: MaskConfig { kind: MaskKind::RandomRegion, ..cfg.mask },
            base_channels: 8,
            ..cfg
        };
        let g = build_generator(&full, &mut rng).unwrap();
        assert_eq!(g.output_shape(1).unwrap(), Shape::new(1, 3, 64, 64));
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut rng = RngState::new(0);
        for cfg in [
            GeneratorConfig { image_size: 48, ..small(MaskKind::Central) },
            GeneratorConfig { image_size: 16, ..small(MaskKind::Central) },
            GeneratorConfig { base_channels: 0, ..small(MaskKind::Central) },
            GeneratorConfig {
                mask: MaskConfig { kind: MaskKind::Central, patch: 12, overlap: 1 },
                ..small(MaskKind::Central)
            },
            GeneratorConfig {
                mask: MaskConfig { kind: MaskKind::Central, patch: 8, overlap: 4 },
                ..small(MaskKind::Central)
            },
        ] {
            assert!(build_generator(&cfg, &mut rng).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn pooling_variant_keeps_output_shape() {
        let mut rng = RngState::new(1);
        let a = build_generator(&small(MaskKind::Central), &mut rng).unwrap();
        let b = build_generator(
            &GeneratorConfig { pool_free: false, ..small(MaskKind::Central) },
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.output_shape(3).unwrap(), b.output_shape(3).unwrap());
        assert!(b.kinds().iter().any(|k| matches!(k, LayerKind::MaxPool { .. })));
    }

    #[test]
    fn embedding_boundary_matches_dim() {
        let mut rng = RngState::new(2);
        for bottleneck in [BottleneckKind::Channelwise, BottleneckKind::Linear] {
            let cfg = GeneratorConfig {
                bottleneck,
                bottleneck_units: 40,
                ..small(MaskKind::Central)
            };
            let mut g = build_generator(&cfg, &mut rng).unwrap();
            let x = Tensor::full([2, 3, 32, 32], 0.5);
            let e = g
                .forward_prefix(&x, g.embed_end().unwrap(), Mode::Eval, &mut rng)
                .unwrap();
            assert_eq!(e.shape().item_len(), cfg.embedding_dim());
        }
    }

    #[test]
    fn eval_outputs_deterministic_and_in_range() {
        let cfg = small(MaskKind::RandomBlock);
        let mut rng = RngState::new(3);
        let mut g = build_generator(&cfg, &mut rng).unwrap();
        let x = rng.uniform([2, 3, 32, 32], 0.0, 1.0).unwrap();
        let a = generator_forward(&mut g, &x, Mode::Eval, &mut rng).unwrap();
        let b = generator_forward(&mut g, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut d = build_discriminator(&cfg, &mut rng).unwrap();
        let p = discriminator_forward(&mut d, &x, Mode::Eval, &mut rng).unwrap();
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
