//! Flat run configuration: defaults, then a TOML file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cenc_core::loss::RecNorm;
use cenc_core::model::{BottleneckKind, GeneratorConfig, MaskConfig};
use cenc_core::{LossMode, MaskKind, TrainConfig};

/// Every tunable, one flat key each. This is also what gets printed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub bottleneck: BottleneckKind,
    pub bottleneck_units: usize,
    pub pool_free: bool,
    pub mask: MaskKind,
    pub patch: usize,
    pub overlap: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub loss: LossMode,
    pub rec_norm: RecNorm,
    pub held_out_fraction: f64,
}

/// Same keys as [`RunConfig`], all optional; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    image_size: Option<usize>,
    base_channels: Option<usize>,
    bottleneck: Option<BottleneckKind>,
    bottleneck_units: Option<usize>,
    pool_free: Option<bool>,
    mask: Option<String>,
    patch: Option<usize>,
    overlap: Option<usize>,
    leaky_slope: Option<f64>,
    dropout: Option<f64>,
    lr_generator: Option<f64>,
    lr_discriminator: Option<f64>,
    lambda_rec: Option<f64>,
    lambda_adv: Option<f64>,
    iterations: Option<u64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    checkpoint_every: Option<u64>,
    loss: Option<String>,
    rec_norm: Option<RecNorm>,
    held_out_fraction: Option<f64>,
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mask: Option<MaskKind>,
    pub patch: Option<usize>,
    pub overlap: Option<usize>,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub loss: Option<LossMode>,
}

pub fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

impl RunConfig {
    /// Resolve defaults, then `file`, then `flags`. Patch and overlap follow
    /// the image size unless set explicitly, and the generator learning
    /// rate is ten times the discriminator's unless set explicitly.
    pub fn resolve(file: Option<FileConfig>, flags: &Overrides) -> Result<Self> {
        let f = file.unwrap_or_default();
        let gd = GeneratorConfig::default();
        let td = TrainConfig::default();
        let image_size = f.image_size.unwrap_or(gd.image_size);
        let central = MaskConfig::central_for(image_size);
        let mask = match (flags.mask, f.mask) {
            (Some(m), _) => m,
            (None, Some(s)) => s.parse()?,
            (None, None) => gd.mask.kind,
        };
        let loss = match (flags.loss, f.loss) {
            (Some(l), _) => l,
            (None, Some(s)) => s.parse()?,
            (None, None) => td.loss_mode,
        };
        let lr_discriminator = f.lr_discriminator.unwrap_or(td.lr_discriminator);
        let cfg = RunConfig {
            image_size,
            base_channels: f.base_channels.unwrap_or(gd.base_channels),
            bottleneck: f.bottleneck.unwrap_or(gd.bottleneck),
            bottleneck_units: f.bottleneck_units.unwrap_or(gd.bottleneck_units),
            pool_free: f.pool_free.unwrap_or(gd.pool_free),
            mask,
            patch: flags.patch.or(f.patch).unwrap_or(central.patch),
            overlap: flags.overlap.or(f.overlap).unwrap_or(central.overlap),
            leaky_slope: f.leaky_slope.unwrap_or(gd.leaky_slope),
            dropout: f.dropout.unwrap_or(gd.dropout),
            lr_generator: f.lr_generator.unwrap_or(10.0 * lr_discriminator),
            lr_discriminator,
            lambda_rec: f.lambda_rec.unwrap_or(td.lambda_rec),
            lambda_adv: f.lambda_adv.unwrap_or(td.lambda_adv),
            iterations: flags.iterations.or(f.iterations).unwrap_or(td.iterations),
            batch_size: f.batch_size.unwrap_or(td.batch_size),
            seed: flags.seed.or(f.seed).unwrap_or(td.seed),
            checkpoint_every: f.checkpoint_every.unwrap_or(td.checkpoint_every),
            loss,
            rec_norm: f.rec_norm.unwrap_or(td.rec_norm),
            held_out_fraction: f.held_out_fraction.unwrap_or(td.held_out_fraction),
        };
        cfg.generator().validate()?;
        cfg.train().validate()?;
        Ok(cfg)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            image_size: self.image_size,
            base_channels: self.base_channels,
            bottleneck: self.bottleneck,
            bottleneck_units: self.bottleneck_units,
            pool_free: self.pool_free,
            mask: MaskConfig {
                kind: self.mask,
                patch: self.patch,
                overlap: self.overlap,
            },
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr_generator: self.lr_generator,
            lr_discriminator: self.lr_discriminator,
            lambda_rec: self.lambda_rec,
            lambda_adv: self.lambda_adv,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            loss_mode: self.loss,
            rec_norm: self.rec_norm,
            held_out_fraction: self.held_out_fraction,
        }
    }

    /// Flat view of a checkpoint's stored configs.
    pub fn from_parts(g: &GeneratorConfig, t: &TrainConfig) -> Self {
        RunConfig {
            image_size: g.image_size,
            base_channels: g.base_channels,
            bottleneck: g.bottleneck,
            bottleneck_units: g.bottleneck_units,
            pool_free: g.pool_free,
            mask: g.mask.kind,
            patch: g.mask.patch,
            overlap: g.mask.overlap,
            leaky_slope: g.leaky_slope,
            dropout: g.dropout,
            lr_generator: t.lr_generator,
            lr_discriminator: t.lr_discriminator,
            lambda_rec: t.lambda_rec,
            lambda_adv: t.lambda_adv,
            iterations: t.iterations,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            loss: t.loss_mode,
            rec_norm: t.rec_norm,
            held_out_fraction: t.held_out_fraction,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable config: {e}\n"))
    }
}

/// Fail if a flag tries to change something fixed by a checkpoint.
pub fn ensure_unchanged<T: PartialEq + std::fmt::Debug>(name: &str, flag: Option<T>, stored: T) -> Result<()> {
    match flag {
        Some(v) if v != stored => bail!("--{name} {v:?} conflicts with the checkpoint ({stored:?})"),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: FileConfig = toml::from_str("image_size = 32\nseed = 4\nlr_discriminator = 1e-4\n").unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(Some(file), &flags).unwrap();
        assert_eq!((c.image_size, c.seed, c.patch, c.overlap), (32, 9, 16, 1));
        assert!((c.lr_generator - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("learning_rate = 1.0\n").is_err());
    }

    #[test]
    fn printed_config_parses_back() {
        let c = RunConfig::resolve(None, &Overrides::default()).unwrap();
        let back: FileConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(RunConfig::resolve(Some(back), &Overrides::default()).unwrap(), c);
    }
}
