use std::path::{Path, PathBuf};

use serde::Serialize;

use super::image::{load_image, resize_and_center_crop, save_ppm};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const SPLIT_STREAM: u64 = 0x5EED;
const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "png"];

/// Images of one directory, resized to a common square size and split into
/// training and held-out parts.
#[derive(Debug, Clone, Serialize)]
pub struct Dataset {
    pub root: PathBuf,
    /// File names relative to `root`, sorted.
    pub ids: Vec<String>,
    #[serde(skip)]
    pub images: Tensor,
    /// Indices into `ids`, in shuffled order.
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
    /// Per-channel mean over the training images.
    pub mean: [f64; 3],
    pub image_size: usize,
}

impl Dataset {
    fn gather(&self, idx: &[usize]) -> Tensor {
        let items: Vec<Tensor> = idx.iter().map(|&i| self.images.item(i)).collect();
        if items.is_empty() {
            return Tensor::zeros([0, 3, self.image_size, self.image_size]);
        }
        Tensor::stack(&items).expect("images share one shape")
    }

    pub fn train_images(&self) -> Tensor {
        self.gather(&self.train)
    }

    pub fn held_out_images(&self) -> Tensor {
        self.gather(&self.held_out)
    }

    pub fn train_ids(&self) -> Vec<&str> {
        self.train.iter().map(|&i| self.ids[i].as_str()).collect()
    }

    pub fn held_out_ids(&self) -> Vec<&str> {
        self.held_out.iter().map(|&i| self.ids[i].as_str()).collect()
    }
}

/// Per-channel mean of a `(N, 3, H, W)` batch.
pub fn channel_mean(images: &Tensor) -> [f64; 3] {
    let s = images.shape();
    let mut mean = [0.0; 3];
    if s.n == 0 || s.c != 3 {
        return mean;
    }
    for n in 0..s.n {
        for (c, m) in mean.iter_mut().enumerate() {
            let start = (n * 3 + c) * s.plane();
            *m += images.data()[start..start + s.plane()].iter().sum::<f64>();
        }
    }
    mean.map(|m| m / (s.n * s.plane()) as f64)
}

/// Sorted image files directly under `root`.
pub fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Number of held-out images for `n` images: `round(n * fraction)`,
/// keeping at least one training image.
pub fn held_out_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1))
}

/// Split `0..n` deterministically into (train, held-out).
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = RngState::new(seed).split(SPLIT_STREAM).permutation(n);
    let k = held_out_count(n, fraction);
    (perm[k..].to_vec(), perm[..k].to_vec())
}

/// Load every image under `root`, resize to `image_size`, split and
/// compute the training mean. Unreadable files are reported together.
pub fn ingest_dataset(
    root: &Path,
    image_size: usize,
    held_out_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&held_out_fraction) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction must be in [0, 1), got {held_out_fraction}"
        )));
    }
    let paths = list_images(root)?;
    if paths.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} holds {} image(s); at least 2 are needed",
            root.display(),
            paths.len()
        )));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut failures = Vec::new();
    for p in &paths {
        match load_image(p).and_then(|t| resize_and_center_crop(&t, image_size)) {
            Ok(t) => images.push(t),
            Err(e) => failures.push(format!("  {}: {e}", p.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Dataset(format!(
            "unreadable images:\n{}",
            failures.join("\n")
        )));
    }
    let images = Tensor::stack(&images)?;
    let ids = paths
        .iter()
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let (train, held_out) = split_indices(paths.len(), held_out_fraction, seed);
    let mut ds = Dataset {
        root: root.to_path_buf(),
        ids,
        images,
        train,
        held_out,
        mean: [0.0; 3],
        image_size,
    };
    ds.mean = channel_mean(&ds.train_images());
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Gradient,
    Checkerboard,
    Blobs,
}

fn random_color(rng: &mut RngState) -> [f64; 3] {
    [rng.next_f64(), rng.next_f64(), rng.next_f64()]
}

/// One procedurally generated `(1, 3, size, size)` image.
pub fn synthetic_image(kind: SyntheticKind, size: usize, rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros([1, 3, size, size]);
    let a = random_color(rng);
    let b = random_color(rng);
    let s = size as f64;
    match kind {
        SyntheticKind::Gradient => {
            let angle = rng.next_f64() * std::f64::consts::TAU;
            let (dy, dx) = angle.sin_cos();
            for y in 0..size {
                for x in 0..size {
                    let u = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy)
                        / std::f64::consts::SQRT_2
                        + 0.5;
                    for c in 0..3 {
                        t.set(0, c, y, x, a[c] + (b[c] - a[c]) * u);
                    }
                }
            }
        }
        SyntheticKind::Checkerboard => {
            let cell = rng.gen_range(2, (size / 4).max(3));
            let (oy, ox) = (rng.gen_range(0, cell), rng.gen_range(0, cell));
            for y in 0..size {
                for x in 0..size {
                    let odd = ((y + oy) / cell + (x + ox) / cell) % 2 == 1;
                    let col = if odd { b } else { a };
                    for (c, v) in col.iter().enumerate() {
                        t.set(0, c, y, x, *v);
                    }
                }
            }
        }
        SyntheticKind::Blobs => {
            let count = rng.gen_range(1, 4);
            let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..count)
                .map(|_| {
                    let centre = [rng.next_f64() * s, rng.next_f64() * s];
                    let sigma = s * (0.08 + 0.2 * rng.next_f64());
                    (centre, sigma, random_color(rng))
                })
                .collect();
            for y in 0..size {
                for x in 0..size {
                    let mut col = a;
                    for (centre, sigma, colour) in &blobs {
                        let d2 = (y as f64 - centre[0]).powi(2) + (x as f64 - centre[1]).powi(2);
                        let g = (-d2 / (2.0 * sigma * sigma)).exp();
                        for c in 0..3 {
                            col[c] += (colour[c] - col[c]) * g;
                        }
                    }
                    for (c, v) in col.iter().enumerate() {
                        t.set(0, c, y, x, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    t
}

/// `count` synthetic images cycling through the three kinds, stacked.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Tensor {
    let kinds = [SyntheticKind::Gradient, SyntheticKind::Checkerboard, SyntheticKind::Blobs];
    let base = RngState::new(seed);
    let items: Vec<Tensor> = (0..count)
        .map(|i| synthetic_image(kinds[i % 3], size, &mut base.split(i as u64)))
        .collect();
    if items.is_empty() {
        return Tensor::zeros([0, 3, size, size]);
    }
    Tensor::stack(&items).expect("images share one shape")
}

/// Write `count` synthetic images as `synth-NNNN.ppm` into `dir`.
pub fn write_synthetic_dataset(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = synthetic_images(count, size, seed);
    (0..count)
        .map(|i| {
            let p = dir.join(format!("synth-{i:04}.ppm"));
            save_ppm(&images.item(i), &p).map(|_| p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let (tr, ho) = split_indices(10, 0.2, 3);
        assert_eq!((tr.len(), ho.len()), (8, 2));
        assert_eq!(split_indices(10, 0.2, 3), (tr, ho));
        assert_eq!(held_out_count(2, 0.9), 1);
    }

    #[test]
    fn ingest_gray_dataset() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5 {
            save_ppm(&Tensor::full([1, 3, 12, 16], 128.0 / 255.0), &dir.path().join(format!("{i}.ppm"))).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let ds = ingest_dataset(dir.path(), 8, 0.2, 1).unwrap();
        assert_eq!(ds.ids.len(), 5);
        assert_eq!((ds.train.len(), ds.held_out.len()), (4, 1));
        for m in ds.mean {
            assert!((m - 128.0 / 255.0).abs() < 1e-12);
        }
        assert_eq!(ds.train_images().shape(), [4, 3, 8, 8].into());
    }

    #[test]
    fn ingest_reports_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        save_ppm(&Tensor::zeros([1, 3, 4, 4]), &dir.path().join("a.ppm")).unwrap();
        std::fs::write(dir.path().join("b.ppm"), b"P6\n4 4\n255\n").unwrap();
        let err = ingest_dataset(dir.path(), 4, 0.0, 0).unwrap_err().to_string();
        assert!(err.contains("b.ppm"), "{err}");
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dataset(empty.path(), 4, 0.0, 0), Err(Error::Dataset(_))));
    }

    #[test]
    fn synthetic_is_seeded_and_bounded() {
        let a = synthetic_images(6, 16, 9);
        assert_eq!(a, synthetic_images(6, 16, 9));
        assert_ne!(a, synthetic_images(6, 16, 10));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
