use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use cenc_core::dataio::{
    ingest_dataset, load_checkpoint, load_image, load_trainer, resize_and_center_crop, save_image,
    save_pgm, write_synthetic_dataset, Checkpoint,
};
use cenc_core::eval::{self, context_features, eval_masks, nn_retrieve, Features, Method};
use cenc_core::gradcheck;
use cenc_core::masking::sample_mask;
use cenc_core::train::{train_loop, LoopOptions, FINAL_CHECKPOINT};
use cenc_core::{MaskKind, RegionMask, RngState, Tensor, Trainer};

use crate::config::{ensure_unchanged, read_file_config, Overrides, RunConfig};
use crate::{EvalArgs, Format, GradcheckArgs, InpaintArgs, MaskFlags, MethodArg, NnArgs, SynthArgs, TrainArgs};

/// Raised when any gradient check exceeds its tolerance.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient check(s) failed", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn print_config(title: &str, body: &str, format: Format) {
    let text = format!("# {title}\n{body}");
    match format {
        Format::Text => println!("{text}"),
        Format::Json => eprintln!("{text}"),
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let overrides = Overrides {
        mask: args.mask.mask.map(Into::into),
        patch: args.mask.patch,
        overlap: args.mask.overlap,
        seed: args.mask.seed,
        iterations: args.iterations,
        loss: args.loss.map(Into::into),
    };
    let resumed = match &args.ckpt {
        Some(path) => {
            if args.config.is_some() {
                bail!("--config cannot be combined with --ckpt; the checkpoint fixes the configuration");
            }
            let mut t = load_trainer(path)?;
            ensure_unchanged("mask", overrides.mask, t.gen_cfg.mask.kind)?;
            ensure_unchanged("patch", overrides.patch, t.gen_cfg.mask.patch)?;
            ensure_unchanged("overlap", overrides.overlap, t.gen_cfg.mask.overlap)?;
            ensure_unchanged("seed", overrides.seed, t.cfg.seed)?;
            ensure_unchanged("loss", overrides.loss, t.cfg.loss_mode)?;
            if let Some(it) = overrides.iterations {
                t.cfg.iterations = it;
            }
            Some(t)
        }
        None => None,
    };
    let run = match &resumed {
        Some(t) => RunConfig::from_parts(&t.gen_cfg, &t.cfg),
        None => {
            let file = args.config.as_deref().map(read_file_config).transpose()?;
            RunConfig::resolve(file, &overrides)?
        }
    };
    print_config("resolved configuration", &run.to_toml(), Format::Text);

    let ds = ingest_dataset(&args.data, run.image_size, run.held_out_fraction, run.seed)?;
    let mut trainer = match resumed {
        Some(t) => t,
        None => Trainer::new(run.generator(), run.train(), ds.mean)?,
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_text(&args.out.join("config.toml"), &run.to_toml())?;
    #[derive(Serialize)]
    struct Split<'a> {
        train: Vec<&'a str>,
        held_out: Vec<&'a str>,
    }
    let split = Split {
        train: ds.train_ids(),
        held_out: ds.held_out_ids(),
    };
    write_text(&args.out.join("split.json"), &serde_json::to_string_pretty(&split)?)?;
    println!(
        "training on {} images ({} held out), iterations {}..{}",
        split.train.len(),
        split.held_out.len(),
        trainer.iteration,
        trainer.cfg.iterations
    );

    let log = args.out.join("train.log");
    let history = train_loop(
        &mut trainer,
        &ds.train_images(),
        LoopOptions {
            log_path: Some(&log),
            checkpoint_dir: Some(&args.out),
        },
    )?;
    if let Some(m) = history.last() {
        println!("last step: {}", m.log_line());
    }
    println!("checkpoint: {}", args.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| cenc_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Mask kind, patch, overlap and seed for inference against a checkpoint.
fn inference_mask(flags: &MaskFlags, ckpt: &Checkpoint) -> Result<(MaskKind, usize, usize, u64)> {
    let g = &ckpt.header.gen_config;
    let kind: MaskKind = flags.mask.map(Into::into).unwrap_or(g.mask.kind);
    if g.mask.kind == MaskKind::Central {
        if kind != MaskKind::Central {
            bail!("this generator predicts a central patch only; use --mask central");
        }
        ensure_unchanged("patch", flags.patch, g.mask.patch)?;
        ensure_unchanged("overlap", flags.overlap, g.mask.overlap)?;
    }
    let patch = flags.patch.unwrap_or(g.mask.patch);
    let overlap = flags.overlap.unwrap_or(g.mask.overlap);
    Ok((kind, patch, overlap, flags.seed.unwrap_or(ckpt.header.train_config.seed)))
}

fn load_sized(path: &Path, size: usize) -> Result<Tensor> {
    let img = load_image(path)?;
    let s = img.shape();
    if (s.h, s.w) == (size, size) {
        return Ok(img);
    }
    eprintln!(
        "note: {} is {}x{}; resizing and center-cropping to {size}x{size}",
        path.display(),
        s.w,
        s.h
    );
    Ok(resize_and_center_crop(&img, size)?)
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn inpaint(args: InpaintArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (kind, patch, overlap, seed) = inference_mask(&args.mask, &ckpt)?;
    let mut run = RunConfig::from_parts(&ckpt.header.gen_config, &ckpt.header.train_config);
    (run.mask, run.patch, run.overlap, run.seed) = (kind, patch, overlap, seed);
    print_config("resolved configuration", &run.to_toml(), Format::Text);

    let mut gen = ckpt.generator()?;
    let size = run.image_size;
    let image = load_sized(&args.input, size)?;
    let mask = sample_mask(kind, size, size, patch, overlap, &mut RngState::new(seed))?;
    let result = eval::inpaint(&mut gen, &image, std::slice::from_ref(&mask), &ckpt.header.trainer.fill)?;

    let out = args
        .out
        .unwrap_or_else(|| sibling(&args.input, "-inpainted", "png"));
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("png").to_string();
    let raw = sibling(&out, "-raw", &ext);
    let mask_path = sibling(&out, "-mask", "pgm");
    save_image(&result.composite, &out)?;
    save_image(&result.raw, &raw)?;
    save_pgm(&mask.mask, &mask_path)?;
    println!("composite: {}", out.display());
    println!("prediction: {}", raw.display());
    println!("mask: {}", mask_path.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (kind, patch, overlap, seed) = inference_mask(&args.mask, &ckpt)?;
    let mut run = RunConfig::from_parts(&ckpt.header.gen_config, &ckpt.header.train_config);
    (run.mask, run.patch, run.overlap) = (kind, patch, overlap);
    print_config("resolved configuration", &format!("{}method = \"{}\"\nmask_seed = {seed}\n", run.to_toml(), method_name(args.method)), args.format);

    let tc = &ckpt.header.train_config;
    let ds = ingest_dataset(&args.data, run.image_size, tc.held_out_fraction, tc.seed)?;
    let held = ds.held_out_images();
    if held.shape().n == 0 {
        return Err(cenc_core::Error::Dataset("the held-out split is empty".into()).into());
    }
    let ids: Vec<String> = ds.held_out_ids().into_iter().map(str::to_string).collect();
    let masks = eval_masks(kind, held.shape().n, run.image_size, patch, overlap, seed)?;
    let method = match args.method {
        MethodArg::Rec => Method::Reconstruction,
        MethodArg::NnOurs => Method::NnOurs,
        MethodArg::NnHog => Method::NnHog,
    };
    let mut gen = ckpt.generator()?;
    let db = ds.train_images();
    let report = eval::evaluate(
        method,
        &mut gen,
        &held,
        &masks,
        Some(&db),
        &ckpt.header.trainer.fill,
        Some(&ids),
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    match args.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => println!("{json}"),
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_text(&dir.join("report.txt"), &report.to_text())?;
        write_text(&dir.join("report.json"), &json)?;
    }
    Ok(())
}

pub fn nn(args: NnArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (kind, patch, overlap, seed) = inference_mask(&args.mask, &ckpt)?;
    let mut run = RunConfig::from_parts(&ckpt.header.gen_config, &ckpt.header.train_config);
    (run.mask, run.patch, run.overlap) = (kind, patch, overlap);
    print_config("resolved configuration", &format!("{}method = \"{}\"\nmask_seed = {seed}\n", run.to_toml(), method_name(args.method)), args.format);

    let size = run.image_size;
    let ds = ingest_dataset(&args.data, size, 0.0, 0)?;
    let query = load_sized(&args.input, size)?;
    let mask: RegionMask = sample_mask(kind, size, size, patch, overlap, &mut RngState::new(seed))?;
    let mut gen = ckpt.generator()?;
    let mut features = match args.method {
        MethodArg::NnOurs => Features::Ours(&mut gen),
        MethodArg::NnHog => Features::Hog,
        MethodArg::Rec => bail!("nn needs --method nn-ours or nn-hog"),
    };
    let fill = ckpt.header.trainer.fill;
    let db = context_features(&ds.images, &mask, &fill, &mut features)?;
    let q = context_features(&query, &mask, &fill, &mut features)?;
    let ranked = nn_retrieve(&q[0], &db)?;

    #[derive(Serialize)]
    struct Row<'a> {
        rank: usize,
        id: &'a str,
        distance: f64,
    }
    let rows: Vec<Row> = ranked
        .iter()
        .enumerate()
        .map(|(r, &(i, d))| Row {
            rank: r + 1,
            id: &ds.ids[i],
            distance: d,
        })
        .collect();
    match args.format {
        Format::Text => {
            println!("rank\tid\tdistance");
            for r in &rows {
                println!("{}\t{}\t{:.6}", r.rank, r.id, r.distance);
            }
        }
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    print_config("resolved configuration", &format!("seed = {}\n", args.seed), args.format);
    let results = gradcheck::run_suite(args.seed)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    match args.format {
        Format::Text => {
            for r in &results {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!("{status}\t{}\t{:.3e}\t(tolerance {:.0e})", r.name, r.relative_error, r.tolerance);
            }
            println!("{} checks, {failed} failed", results.len());
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                name: &'a str,
                relative_error: f64,
                tolerance: f64,
                passed: bool,
            }
            let rows: Vec<Row> = results
                .iter()
                .map(|r| Row {
                    name: &r.name,
                    relative_error: r.relative_error,
                    tolerance: r.tolerance,
                    passed: r.passed(),
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
    }
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}

pub fn synth_data(args: SynthArgs) -> Result<()> {
    print_config(
        "resolved configuration",
        &format!(
            "out = {:?}\ncount = {}\nsize = {}\nseed = {}\n",
            args.out.display().to_string(),
            args.count,
            args.size,
            args.seed
        ),
        Format::Text,
    );
    if args.size == 0 {
        bail!("--size must be positive");
    }
    let paths = write_synthetic_dataset(&args.out, args.count, args.size, args.seed)?;
    println!("wrote {} images to {}", paths.len(), args.out.display());
    Ok(())
}

fn method_name(m: MethodArg) -> String {
    m.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}
