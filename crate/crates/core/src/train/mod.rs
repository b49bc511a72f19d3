//! Adam and the alternating generator / discriminator training loop.

mod adam;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::{self, RecNorm, LAMBDA_ADV, LAMBDA_REC};
use crate::masking::{overlap_weight_map, sample_mask, MaskKind, RegionMask};
use crate::model::{build_discriminator, build_generator, GeneratorConfig, Network};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub use adam::{adam_step, AdamHyper, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

/// Discriminator loss below this counts as saturated.
pub const SATURATION_LOSS: f64 = 1e-6;
/// Consecutive saturated steps that abort training.
pub const SATURATION_STEPS: u32 = 200;

const GEN_INIT_STREAM: u64 = 1;
const DISC_INIT_STREAM: u64 = 2;
const STEP_STREAM: u64 = 3;
const EPOCH_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Masked reconstruction only; the discriminator is never updated.
    L2Only,
    /// Weighted reconstruction plus adversarial loss.
    Joint,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "l2_only" => Ok(LossMode::L2Only),
            "joint" => Ok(LossMode::Joint),
            other => Err(Error::InvalidArgument(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    pub loss_mode: LossMode,
    pub rec_norm: RecNorm,
    /// Fraction of the dataset kept out of training for evaluation.
    pub held_out_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_generator: 2e-3,
            lr_discriminator: 2e-4,
            lambda_rec: LAMBDA_REC,
            lambda_adv: LAMBDA_ADV,
            iterations: 1000,
            batch_size: 16,
            seed: 0,
            checkpoint_every: 0,
            loss_mode: LossMode::Joint,
            rec_norm: RecNorm::L2,
            held_out_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_generator", self.lr_generator)?;
        positive("lr_discriminator", self.lr_discriminator)?;
        if !(self.lambda_rec >= 0.0 && self.lambda_adv >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(Error::InvalidArgument(format!(
                "held_out_fraction must be in [0, 1), got {}",
                self.held_out_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Losses of one iteration; `d_loss` and `g_adv` are absent in l2-only mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub rec: f64,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
}

impl StepMetrics {
    /// Tab-separated `iter rec d_loss g_adv`, with `-` for absent values.
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.17e}"));
        format!(
            "{}\t{:.17e}\t{}\t{}",
            self.iteration,
            self.rec,
            opt(self.d_loss),
            opt(self.g_adv)
        )
    }

    fn is_finite(&self) -> bool {
        self.rec.is_finite()
            && self.d_loss.is_none_or(f64::is_finite)
            && self.g_adv.is_none_or(f64::is_finite)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub gen_cfg: GeneratorConfig,
    pub cfg: TrainConfig,
    pub gen: Network,
    pub disc: Network,
    pub gen_adam: AdamState,
    pub disc_adam: AdamState,
    /// Number of completed iterations.
    pub iteration: u64,
    /// Consecutive iterations with a saturated discriminator.
    pub saturated_steps: u32,
    /// Per-channel value written into hidden pixels.
    pub fill: [f64; 3],
    pub rng: RngState,
}

/// Input-ready batch: mean-filled images, their masks, targets and weights.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub masks: Vec<RegionMask>,
    pub masked: Tensor,
    /// Ground truth over the prediction window.
    pub target: Tensor,
    /// Reconstruction weights over the prediction window, `(1|N, 1, h, w)`.
    pub weights: Tensor,
    /// Hidden-pixel indicator over the prediction window, same layout as `weights`.
    pub hidden: Tensor,
}

/// Sample one mask per image and build the generator input and targets.
pub fn prepare_batch(
    images: &Tensor,
    gen_cfg: &GeneratorConfig,
    fill: &[f64; 3],
    rng: &mut RngState,
) -> Result<PreparedBatch> {
    let s = images.shape();
    let mc = gen_cfg.mask;
    let mut masks = Vec::with_capacity(s.n);
    for _ in 0..s.n {
        masks.push(sample_mask(mc.kind, s.h, s.w, mc.patch, mc.overlap, rng)?);
    }
    prepare_with_masks(images, masks, gen_cfg.mask.kind, fill)
}

/// As [`prepare_batch`] with masks supplied by the caller.
pub fn prepare_with_masks(
    images: &Tensor,
    masks: Vec<RegionMask>,
    kind: MaskKind,
    fill: &[f64; 3],
) -> Result<PreparedBatch> {
    let s = images.shape();
    if masks.len() != s.n || s.c != 3 {
        return Err(Error::InvalidArgument(format!(
            "{} masks for a batch of shape {s}",
            masks.len()
        )));
    }
    let mut items = Vec::with_capacity(s.n);
    for (n, m) in masks.iter().enumerate() {
        items.push(crate::masking::apply_mask(&images.item(n), m, fill)?);
    }
    let masked = Tensor::stack(&items)?;
    let (target, weights, hidden) = if kind == MaskKind::Central {
        let m = &masks[0];
        if masks.iter().any(|o| o.mask != m.mask) {
            return Err(Error::InvalidArgument("central masks must agree across the batch".into()));
        }
        let r = m.prediction_window();
        let target = images.crop(r.top, r.left, r.height, r.width)?;
        let weights = overlap_weight_map(m).in_prediction_window(m);
        let hidden = m.mask.crop(r.top, r.left, r.height, r.width)?;
        (target, weights, hidden)
    } else {
        let ws: Vec<Tensor> = masks.iter().map(|m| overlap_weight_map(m).weights).collect();
        let hs: Vec<Tensor> = masks.iter().map(|m| m.mask.detached()).collect();
        (images.detached(), Tensor::stack(&ws)?, Tensor::stack(&hs)?)
    };
    Ok(PreparedBatch {
        masks,
        masked,
        target,
        weights,
        hidden,
    })
}

/// Prediction pasted into the hidden pixels of `context`; `hidden` has one
/// plane per item (or one shared plane).
pub fn composite(context: &Tensor, pred: &Tensor, hidden: &Tensor) -> Result<Tensor> {
    let s = context.shape();
    pred.expect_shape(s)?;
    let hs = hidden.shape();
    if hs.c != 1 || (hs.h, hs.w) != (s.h, s.w) || (hs.n != 1 && hs.n != s.n) {
        return Err(Error::ShapeMismatch {
            expected: Shape::new(s.n, 1, s.h, s.w),
            actual: hs,
        });
    }
    let mut out = context.detached();
    for n in 0..s.n {
        let plane = hidden.item_data(if hs.n == 1 { 0 } else { n });
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for (i, &h) in plane.iter().enumerate() {
                if h != 0.0 {
                    out.data_mut()[start + i] = pred.data()[start + i];
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a composite with respect to the prediction: `dy` on hidden
/// pixels, zero on context.
fn composite_backward(dy: &Tensor, hidden: &Tensor) -> Tensor {
    let s = dy.shape();
    let hs = hidden.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let plane = hidden.item_data(if hs.n == 1 { 0 } else { n });
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for (i, &h) in plane.iter().enumerate() {
                if h != 0.0 {
                    out.data_mut()[start + i] = dy.data()[start + i];
                }
            }
        }
    }
    out
}

impl Trainer {
    /// Fresh networks initialized from `cfg.seed`.
    pub fn new(gen_cfg: GeneratorConfig, cfg: TrainConfig, fill: [f64; 3]) -> Result<Self> {
        cfg.validate()?;
        let rng = RngState::new(cfg.seed);
        let gen = build_generator(&gen_cfg, &mut rng.split(GEN_INIT_STREAM))?;
        let disc = build_discriminator(&gen_cfg, &mut rng.split(DISC_INIT_STREAM))?;
        Ok(Trainer {
            gen_adam: AdamState::for_network(&gen),
            disc_adam: AdamState::for_network(&disc),
            gen_cfg,
            cfg,
            gen,
            disc,
            iteration: 0,
            saturated_steps: 0,
            fill,
            rng,
        })
    }

    /// Dataset indices for iteration `iteration`: consecutive slices of
    /// per-epoch permutations, so any iteration can be reproduced alone.
    pub fn batch_indices(&self, iteration: u64, dataset_len: usize) -> Vec<usize> {
        let b = self.cfg.batch_size.min(dataset_len);
        let mut out = Vec::with_capacity(b);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for j in 0..b as u64 {
            let pos = iteration * b as u64 + j;
            let epoch = pos / dataset_len as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let perm = self.rng.split(EPOCH_STREAM).split(epoch).permutation(dataset_len);
                cached = Some((epoch, perm));
            }
            let perm = &cached.as_ref().expect("just filled").1;
            out.push(perm[(pos % dataset_len as u64) as usize]);
        }
        out
    }

    fn step_rng(&self, iteration: u64) -> RngState {
        self.rng.split(STEP_STREAM).split(iteration)
    }

    /// Masks drawn at `iteration` for a batch of `batch` `size x size` images.
    pub fn iteration_masks(&self, iteration: u64, batch: usize, size: usize) -> Result<Vec<RegionMask>> {
        let mut rng = self.step_rng(iteration).split(0);
        let mc = self.gen_cfg.mask;
        (0..batch)
            .map(|_| sample_mask(mc.kind, size, size, mc.patch, mc.overlap, &mut rng))
            .collect()
    }

    /// One alternating update on `batch` (images in `[0, 1]`).
    pub fn train_step(&mut self, batch: &Tensor) -> Result<StepMetrics> {
        let mut rng = self.step_rng(self.iteration);
        let s = batch.shape();
        if s.h != s.w {
            return Err(Error::InvalidShape(format!("training images must be square, got {s}")));
        }
        let masks = self.iteration_masks(self.iteration, s.n, s.h)?;
        let prep = prepare_with_masks(batch, masks, self.gen_cfg.mask.kind, &self.fill)?;

        self.gen.zero_grad();
        let pred = self.gen.forward(&prep.masked, Mode::Train, &mut rng)?;
        let rec = loss::reconstruction_loss_with(&pred, &prep.target, &prep.weights, self.cfg.rec_norm)?;

        let mut metrics = StepMetrics {
            iteration: self.iteration,
            rec: rec.value,
            d_loss: None,
            g_adv: None,
        };

        let grad = match self.cfg.loss_mode {
            LossMode::L2Only => rec.grad,
            LossMode::Joint => {
                let central = self.gen_cfg.mask.kind == MaskKind::Central;
                let fake = if central {
                    pred.detached()
                } else {
                    composite(&prep.target, &pred, &prep.hidden)?
                };

                // discriminator: real then fake, separate batch statistics
                self.disc.zero_grad();
                let d_real = self.disc.forward(&prep.target, Mode::Train, &mut rng)?;
                // the real-branch gradient does not depend on the fake outputs
                let real_grad = loss::discriminator_loss(&d_real, &d_real)?.grad_real;
                self.disc.backward(&real_grad)?;
                let d_fake = self.disc.forward(&fake, Mode::Train, &mut rng)?;
                let d = loss::discriminator_loss(&d_real, &d_fake)?;
                self.disc.backward(&d.grad_fake)?;
                adam_step(&mut self.disc, &mut self.disc_adam, self.cfg.lr_discriminator)?;
                metrics.d_loss = Some(d.value);

                // generator: non-saturating objective through the updated discriminator
                self.disc.zero_grad();
                let d_fake = self.disc.forward(&fake, Mode::Train, &mut rng)?;
                let adv = loss::generator_adv_loss(&d_fake)?;
                let d_fake_grad = self.disc.backward(&adv.grad)?;
                self.disc.zero_grad();
                metrics.g_adv = Some(adv.value);
                let adv_pred = loss::LossValue {
                    value: adv.value,
                    grad: if central {
                        d_fake_grad
                    } else {
                        composite_backward(&d_fake_grad, &prep.hidden)
                    },
                };
                loss::joint_loss(&rec, &adv_pred, self.cfg.lambda_rec, self.cfg.lambda_adv)?.grad
            }
        };
        self.gen.backward(&grad)?;
        adam_step(&mut self.gen, &mut self.gen_adam, self.cfg.lr_generator)?;
        self.iteration += 1;
        Ok(metrics)
    }
}

/// Where the loop writes its artifacts.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoopOptions<'a> {
    /// Loss log, appended one line per iteration.
    pub log_path: Option<&'a Path>,
    /// Directory for periodic (`iter-NNNNNNNN`) and `final` checkpoints.
    pub checkpoint_dir: Option<&'a Path>,
}

pub const FINAL_CHECKPOINT: &str = "final";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("iter-{iteration:08}")
}

fn diverged(t: &Trainer, reason: String, last: &Option<PathBuf>) -> Error {
    Error::Divergence {
        iteration: t.iteration,
        reason,
        last_checkpoint: last.clone(),
    }
}

/// Run `trainer` from its current iteration up to `cfg.iterations` over
/// `data` (`(N, 3, S, S)` images in `[0, 1]`).
pub fn train_loop(
    trainer: &mut Trainer,
    data: &Tensor,
    opts: LoopOptions<'_>,
) -> Result<Vec<StepMetrics>> {
    let n = data.shape().n;
    if n == 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut log = match opts.log_path {
        Some(p) => Some((
            p,
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    if let Some(dir) = opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut last_checkpoint = None;
    let mut history = Vec::new();
    while trainer.iteration < trainer.cfg.iterations {
        let idx = trainer.batch_indices(trainer.iteration, n);
        let items: Vec<Tensor> = idx.iter().map(|&i| data.item(i)).collect();
        let batch = Tensor::stack(&items)?;
        let m = match trainer.train_step(&batch) {
            Ok(m) => m,
            Err(Error::NonFinite(what)) => {
                return Err(diverged(trainer, format!("non-finite {what}"), &last_checkpoint))
            }
            Err(e) => return Err(e),
        };
        if !m.is_finite() {
            return Err(diverged(trainer, format!("non-finite loss: {}", m.log_line()), &last_checkpoint));
        }
        match m.d_loss {
            Some(d) if d < SATURATION_LOSS => trainer.saturated_steps += 1,
            _ => trainer.saturated_steps = 0,
        }
        if trainer.saturated_steps >= SATURATION_STEPS {
            return Err(diverged(
                trainer,
                format!("discriminator loss below {SATURATION_LOSS:e} for {SATURATION_STEPS} steps"),
                &last_checkpoint,
            ));
        }
        if let Some((p, f)) = log.as_mut() {
            writeln!(f, "{}", m.log_line()).map_err(|e| Error::io(*p, e))?;
        }
        history.push(m);

        let every = trainer.cfg.checkpoint_every;
        if let Some(dir) = opts.checkpoint_dir {
            if every > 0 && trainer.iteration.is_multiple_of(every) {
                let path = dir.join(checkpoint_name(trainer.iteration));
                crate::dataio::save_trainer(trainer, &path)?;
                last_checkpoint = Some(path);
            }
        }
    }
    if let Some(dir) = opts.checkpoint_dir {
        crate::dataio::save_trainer(trainer, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(history)
}
