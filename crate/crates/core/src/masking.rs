//! Region masks: which pixels are hidden from the generator.
//!
//! A mask is `(1, 1, H, W)` with `1` on dropped pixels and `0` on context.
//! Three families are provided: a centered square (optionally predicted
//! with a rim that overlaps the context), unions of random rectangles, and
//! smooth random blobs. The random families never hide more than a quarter
//! of the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

/// Upper bound on the hidden fraction for random masks.
pub const MAX_DROPPED_FRACTION: f64 = 0.25;
/// Reconstruction weight of the rim where the predicted patch overlaps context.
pub const OVERLAP_WEIGHT: f64 = 10.0;
/// Fill used when no dataset mean is available (images in `[0, 1]`).
pub const DEFAULT_FILL: [f64; 3] = [0.5, 0.5, 0.5];

const BLOCK_COUNT: (usize, usize) = (1, 5);
const BLOCK_SIDE: (f64, f64) = (0.10, 0.40);
const REGION_FRACTION: (f64, f64) = (0.05, 0.25);
const REGION_GRID: (usize, usize) = (3, 6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Central,
    RandomBlock,
    RandomRegion,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central" | "center" => Ok(MaskKind::Central),
            "block" | "random_block" => Ok(MaskKind::RandomBlock),
            "region" | "random_region" => Ok(MaskKind::RandomRegion),
            other => Err(Error::InvalidArgument(format!("unknown mask kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.top < o.top + o.height
            && o.top < self.top + self.height
            && self.left < o.left + o.width
            && o.left < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MaskMeta {
    Central {
        /// Square the generator predicts.
        predicted: Rect,
        /// Square actually hidden from the generator.
        dropped: Rect,
        overlap: usize,
    },
    RandomBlock {
        blocks: Vec<Rect>,
    },
    RandomRegion {
        source: RngState,
        grid: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub mask: Tensor,
    pub kind: MaskKind,
    pub meta: MaskMeta,
}

impl RegionMask {
    pub fn height(&self) -> usize {
        self.mask.shape().h
    }

    pub fn width(&self) -> usize {
        self.mask.shape().w
    }

    pub fn dropped_count(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.dropped_count() as f64 / self.mask.numel() as f64
    }

    pub fn is_dropped(&self, y: usize, x: usize) -> bool {
        self.mask.get(0, 0, y, x) != 0.0
    }

    /// Window the generator predicts: the central patch, or the whole image.
    pub fn prediction_window(&self) -> Rect {
        match &self.meta {
            MaskMeta::Central { predicted, .. } => *predicted,
            _ => Rect {
                top: 0,
                left: 0,
                height: self.height(),
                width: self.width(),
            },
        }
    }
}

fn rect_mask(h: usize, w: usize, rects: &[Rect]) -> Tensor {
    let mut m = Tensor::zeros([1, 1, h, w]);
    for r in rects {
        for y in r.top..r.top + r.height {
            for x in r.left..r.left + r.width {
                m.set(0, 0, y, x, 1.0);
            }
        }
    }
    m
}

/// Centered `patch x patch` prediction window whose inner
/// `(patch - 2*overlap)` square is hidden.
pub fn central_mask(h: usize, w: usize, patch: usize, overlap: usize) -> Result<RegionMask> {
    if patch == 0 || patch > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "central patch {patch} does not fit a {h}x{w} image"
        )));
    }
    if 2 * overlap >= patch {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} leaves nothing of a {patch}px patch to hide"
        )));
    }
    let predicted = Rect {
        top: (h - patch) / 2,
        left: (w - patch) / 2,
        height: patch,
        width: patch,
    };
    let inner = patch - 2 * overlap;
    let dropped = Rect {
        top: predicted.top + overlap,
        left: predicted.left + overlap,
        height: inner,
        width: inner,
    };
    Ok(RegionMask {
        mask: rect_mask(h, w, &[dropped]),
        kind: MaskKind::Central,
        meta: MaskMeta::Central {
            predicted,
            dropped,
            overlap,
        },
    })
}

fn check_random_dims(h: usize, w: usize) -> Result<()> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!(
            "random masks need at least 8x8 images, got {h}x{w}"
        )));
    }
    Ok(())
}

fn side_range(side: usize) -> (usize, usize) {
    let lo = ((BLOCK_SIDE.0 * side as f64).round() as usize).max(1);
    let hi = ((BLOCK_SIDE.1 * side as f64).floor() as usize).max(lo);
    (lo, hi)
}

/// Union of 1 to 5 possibly overlapping rectangles, each side 10% to 40% of
/// the image side, clipped at the border. Redrawn until the union covers at
/// most a quarter of the image.
pub fn random_block_mask(h: usize, w: usize, rng: &mut RngState) -> Result<RegionMask> {
    check_random_dims(h, w)?;
    let (hlo, hhi) = side_range(h);
    let (wlo, whi) = side_range(w);
    let limit = (MAX_DROPPED_FRACTION * (h * w) as f64).floor() as usize;
    loop {
        let count = rng.gen_range(BLOCK_COUNT.0, BLOCK_COUNT.1 + 1);
        let blocks: Vec<Rect> = (0..count)
            .map(|_| {
                let bh = rng.gen_range(hlo, hhi + 1);
                let bw = rng.gen_range(wlo, whi + 1);
                let top = rng.gen_range(0, h);
                let left = rng.gen_range(0, w);
                Rect {
                    top,
                    left,
                    height: bh.min(h - top),
                    width: bw.min(w - left),
                }
            })
            .collect();
        let mask = rect_mask(h, w, &blocks);
        let dropped = mask.data().iter().filter(|&&v| v != 0.0).count();
        if dropped <= limit {
            return Ok(RegionMask {
                mask,
                kind: MaskKind::RandomBlock,
                meta: MaskMeta::RandomBlock { blocks },
            });
        }
    }
}

/// Smooth random blobs: a coarse periodic noise grid is bilinearly
/// upsampled at a random offset, and the highest-valued pixels, between 5%
/// and 25% of the image, are dropped.
pub fn random_region_mask(h: usize, w: usize, rng: &mut RngState) -> Result<RegionMask> {
    check_random_dims(h, w)?;
    let source = *rng;
    let grid = rng.gen_range(REGION_GRID.0, REGION_GRID.1 + 1);
    let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.next_f64()).collect();
    let (sy, sx) = (rng.next_f64() * grid as f64, rng.next_f64() * grid as f64);
    let frac = REGION_FRACTION.0 + (REGION_FRACTION.1 - REGION_FRACTION.0) * rng.next_f64();
    let k = ((frac * (h * w) as f64).floor() as usize).clamp(1, (MAX_DROPPED_FRACTION * (h * w) as f64) as usize);

    let at = |gy: usize, gx: usize| coarse[(gy % grid) * grid + gx % grid];
    let mut field: Vec<(f64, usize)> = Vec::with_capacity(h * w);
    for y in 0..h {
        let u = y as f64 / h as f64 * grid as f64 + sy;
        let (gy, fy) = (u.floor() as usize, u.fract());
        for x in 0..w {
            let v = x as f64 / w as f64 * grid as f64 + sx;
            let (gx, fx) = (v.floor() as usize, v.fract());
            let top = at(gy, gx) * (1.0 - fx) + at(gy, gx + 1) * fx;
            let bottom = at(gy + 1, gx) * (1.0 - fx) + at(gy + 1, gx + 1) * fx;
            field.push((top * (1.0 - fy) + bottom * fy, y * w + x));
        }
    }
    field.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = Tensor::zeros([1, 1, h, w]);
    for &(_, i) in &field[..k] {
        mask.data_mut()[i] = 1.0;
    }
    Ok(RegionMask {
        mask,
        kind: MaskKind::RandomRegion,
        meta: MaskMeta::RandomRegion { source, grid },
    })
}

/// Draw a mask of the given kind. `patch` and `overlap` only matter for
/// central masks.
pub fn sample_mask(
    kind: MaskKind,
    h: usize,
    w: usize,
    patch: usize,
    overlap: usize,
    rng: &mut RngState,
) -> Result<RegionMask> {
    match kind {
        MaskKind::Central => central_mask(h, w, patch, overlap),
        MaskKind::RandomBlock => random_block_mask(h, w, rng),
        MaskKind::RandomRegion => random_region_mask(h, w, rng),
    }
}

/// Replace dropped pixels with the per-channel fill value; context pixels
/// are copied unchanged. The mask is shared by every item in the batch.
pub fn apply_mask(x: &Tensor, m: &RegionMask, fill: &[f64]) -> Result<Tensor> {
    let s = x.shape();
    if (s.h, s.w) != (m.height(), m.width()) {
        return Err(Error::ShapeMismatch {
            expected: Shape::new(s.n, s.c, m.height(), m.width()),
            actual: s,
        });
    }
    if fill.len() != s.c {
        return Err(Error::InvalidArgument(format!(
            "{} fill values for {} channels",
            fill.len(),
            s.c
        )));
    }
    let mut out = x.detached();
    let md = m.mask.data();
    for n in 0..s.n {
        for (c, &f) in fill.iter().enumerate() {
            let start = (n * s.c + c) * s.plane();
            out.data_mut()[start..start + s.plane()]
                .iter_mut()
                .zip(md)
                .for_each(|(v, &mv)| {
                    if mv != 0.0 {
                        *v = f;
                    }
                });
        }
    }
    Ok(out)
}

/// Per-pixel reconstruction weights over the full image.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapWeightMap {
    pub weights: Tensor,
}

impl OverlapWeightMap {
    /// Weights restricted to the mask's prediction window.
    pub fn in_prediction_window(&self, m: &RegionMask) -> Tensor {
        let r = m.prediction_window();
        self.weights
            .crop(r.top, r.left, r.height, r.width)
            .expect("window lies inside the image")
    }
}

/// `10` on the overlap rim of a central mask, `1` on hidden pixels, `0`
/// elsewhere. Masks without a rim get their own values.
pub fn overlap_weight_map(m: &RegionMask) -> OverlapWeightMap {
    match &m.meta {
        MaskMeta::Central {
            predicted,
            overlap,
            ..
        } if *overlap > 0 => {
            let mut weights = Tensor::zeros(m.mask.shape());
            for y in predicted.top..predicted.top + predicted.height {
                for x in predicted.left..predicted.left + predicted.width {
                    let v = if m.is_dropped(y, x) { 1.0 } else { OVERLAP_WEIGHT };
                    weights.set(0, 0, y, x, v);
                }
            }
            OverlapWeightMap { weights }
        }
        _ => OverlapWeightMap {
            weights: m.mask.detached(),
        },
    }
}
