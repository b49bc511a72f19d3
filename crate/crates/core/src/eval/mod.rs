//! Inpainting metrics, context embeddings, HOG features and
//! nearest-neighbor baselines.

mod hog;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::masking::{apply_mask, MaskKind, RegionMask};
use crate::model::Network;
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};
use crate::train::composite;

pub use hog::{hog_descriptor, hog_len, HOG_BINS, HOG_BLOCK, HOG_CELL};

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Reconstruction,
    NnOurs,
    NnHog,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rec" | "reconstruction" => Ok(Method::Reconstruction),
            "nn-ours" | "nn_ours" => Ok(Method::NnOurs),
            "nn-hog" | "nn_hog" => Ok(Method::NnHog),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub l1_pct: f64,
    pub l2_pct: f64,
    pub psnr_db: f64,
}

/// Set-level metrics: each is the arithmetic mean of the per-image values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub mean_l1_pct: f64,
    pub mean_l2_pct: f64,
    pub psnr_db: f64,
    pub per_image: Vec<ImageMetrics>,
}

impl EvalReport {
    pub fn from_per_image(method: Method, per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::InvalidArgument("no images to report on".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Ok(EvalReport {
            method,
            mean_l1_pct: mean(|m| m.l1_pct),
            mean_l2_pct: mean(|m| m.l2_pct),
            psnr_db: mean(|m| m.psnr_db),
            per_image,
        })
    }

    /// Flat `key = value` lines, per-image rows prefixed with `image.<id>`.
    pub fn to_text(&self) -> String {
        let method = serde_json::to_value(self.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let mut out = format!(
            "method = {method}\nimages = {}\nmean_l1_pct = {:.4}\nmean_l2_pct = {:.4}\npsnr_db = {:.4}\n",
            self.per_image.len(),
            self.mean_l1_pct,
            self.mean_l2_pct,
            self.psnr_db
        );
        for m in &self.per_image {
            out.push_str(&format!(
                "image.{} = l1_pct {:.4} l2_pct {:.4} psnr_db {:.4}\n",
                m.id, m.l1_pct, m.l2_pct, m.psnr_db
            ));
        }
        out
    }
}

fn check_pair(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<()> {
    let s = pred.shape();
    target.expect_shape(s)?;
    let ms = mask.shape();
    if ms.c != 1 || (ms.h, ms.w) != (s.h, s.w) || (ms.n != 1 && ms.n != s.n) {
        return Err(Error::ShapeMismatch {
            expected: Shape::new(s.n, 1, s.h, s.w),
            actual: ms,
        });
    }
    Ok(())
}

/// Per-image squared and absolute error sums over masked pixels, and the
/// number of masked values.
fn per_image_errors(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Vec<(f64, f64, usize)>> {
    check_pair(pred, target, mask)?;
    let s = pred.shape();
    let ms = mask.shape();
    let mut out = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let plane = mask.item_data(if ms.n == 1 { 0 } else { n });
        let (mut l1, mut l2, mut count) = (0.0, 0.0, 0);
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for (i, &m) in plane.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let d = pred.data()[start + i] - target.data()[start + i];
                l1 += d.abs();
                l2 += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument(format!("mask of image {n} is empty")));
        }
        out.push((l1, l2, count));
    }
    Ok(out)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean over images of `10 log10(1 / MSE)` on masked pixels, for values in
/// `[0, 1]`; exact reconstructions count as [`PSNR_CAP_DB`].
pub fn psnr(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    let errs = per_image_errors(pred, target, mask)?;
    Ok(errs.iter().map(|&(_, l2, k)| psnr_from_mse(l2 / k as f64)).sum::<f64>() / errs.len() as f64)
}

/// Mean over images of the masked mean absolute (L1) or squared (L2)
/// error, in percent.
pub fn mean_error_pct(pred: &Tensor, target: &Tensor, mask: &Tensor, norm: ErrorNorm) -> Result<f64> {
    let errs = per_image_errors(pred, target, mask)?;
    let per = |&(l1, l2, k): &(f64, f64, usize)| match norm {
        ErrorNorm::L1 => l1 / k as f64,
        ErrorNorm::L2 => l2 / k as f64,
    };
    Ok(100.0 * errs.iter().map(per).sum::<f64>() / errs.len() as f64)
}

/// Per-image metrics; `ids` label the rows (indices are used when absent).
pub fn image_metrics(
    pred: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    ids: Option<&[String]>,
) -> Result<Vec<ImageMetrics>> {
    let errs = per_image_errors(pred, target, mask)?;
    Ok(errs
        .iter()
        .enumerate()
        .map(|(n, &(l1, l2, k))| ImageMetrics {
            id: ids.and_then(|ids| ids.get(n).cloned()).unwrap_or_else(|| n.to_string()),
            l1_pct: 100.0 * l1 / k as f64,
            l2_pct: 100.0 * l2 / k as f64,
            psnr_db: psnr_from_mse(l2 / k as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbedding {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Flattened bottleneck activations of mean-filled inputs, one row per item.
pub fn embed_context(gen: &mut Network, masked: &Tensor) -> Result<Vec<Vec<f64>>> {
    let end = gen
        .embed_end()
        .ok_or_else(|| Error::InvalidArgument("network has no embedding boundary".into()))?;
    let e = gen.forward_prefix(masked, end, Mode::Eval, &mut RngState::new(0))?;
    Ok((0..e.shape().n).map(|n| e.item_data(n).to_vec()).collect())
}

/// Stack the per-item masks of a batch as `(N, 1, H, W)`.
pub fn mask_stack(masks: &[RegionMask]) -> Result<Tensor> {
    let planes: Vec<Tensor> = masks.iter().map(|m| m.mask.detached()).collect();
    Tensor::stack(&planes)
}

fn mask_each(images: &Tensor, masks: &[RegionMask], fill: &[f64; 3]) -> Result<Tensor> {
    if masks.len() != images.shape().n {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} images",
            masks.len(),
            images.shape().n
        )));
    }
    let items = masks
        .iter()
        .enumerate()
        .map(|(n, m)| apply_mask(&images.item(n), m, fill))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// Generator output placed on the full image grid, and the composite that
/// keeps every context pixel of the input.
#[derive(Debug, Clone)]
pub struct Inpainting {
    /// Prediction window pasted over the mean-filled input.
    pub raw: Tensor,
    /// Input with only the hidden pixels replaced by the prediction.
    pub composite: Tensor,
    /// `(N, 1, H, W)` hidden-pixel indicator.
    pub hidden: Tensor,
}

/// Run the generator in eval mode over `images` with one mask per image.
pub fn inpaint(gen: &mut Network, images: &Tensor, masks: &[RegionMask], fill: &[f64; 3]) -> Result<Inpainting> {
    let masked = mask_each(images, masks, fill)?;
    let pred = gen.forward(&masked, Mode::Eval, &mut RngState::new(0))?;
    let ps = pred.shape();
    let s = images.shape();
    let mut raw_items = Vec::with_capacity(s.n);
    for (n, m) in masks.iter().enumerate() {
        // full-image generators serve every mask kind
        let (top, left) = if (ps.h, ps.w) == (s.h, s.w) {
            (0, 0)
        } else {
            let r = m.prediction_window();
            if (ps.h, ps.w) != (r.height, r.width) {
                return Err(Error::ShapeMismatch {
                    expected: Shape::new(s.n, 3, r.height, r.width),
                    actual: ps,
                });
            }
            (r.top, r.left)
        };
        raw_items.push(masked.item(n).paste(&pred.item(n), top, left)?);
    }
    let raw = Tensor::stack(&raw_items)?;
    let hidden = mask_stack(masks)?;
    let composite = composite(images, &raw, &hidden)?;
    Ok(Inpainting { raw, composite, hidden })
}

/// Ascending Euclidean distances from `query` to each row of `db`, ties
/// broken by index.
pub fn nn_retrieve(query: &[f64], db: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    if db.is_empty() {
        return Err(Error::InvalidArgument("empty retrieval database".into()));
    }
    let mut ranked = Vec::with_capacity(db.len());
    for (i, row) in db.iter().enumerate() {
        if row.len() != query.len() {
            return Err(Error::InvalidArgument(format!(
                "database row {i} has dimension {}, query has {}",
                row.len(),
                query.len()
            )));
        }
        let d2: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        ranked.push((i, d2.sqrt()));
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Context features used for nearest-neighbor inpainting.
pub enum Features<'a> {
    Ours(&'a mut Network),
    Hog,
}

/// Features of `images` after hiding `mask` (shared by all images).
pub fn context_features(
    images: &Tensor,
    mask: &RegionMask,
    fill: &[f64; 3],
    features: &mut Features<'_>,
) -> Result<Vec<Vec<f64>>> {
    let masked = apply_mask(images, mask, fill)?;
    match features {
        Features::Ours(gen) => embed_context(gen, &masked),
        Features::Hog => (0..masked.shape().n)
            .map(|n| hog_descriptor(&masked.item(n), HOG_CELL, HOG_BINS))
            .collect(),
    }
}

/// Fill the hidden region of each query with the pixels of its nearest
/// database image under context features. Returns the composites and the
/// chosen database indices.
pub fn nn_inpaint(
    queries: &Tensor,
    mask: &RegionMask,
    db_images: &Tensor,
    fill: &[f64; 3],
    features: &mut Features<'_>,
) -> Result<(Tensor, Vec<usize>)> {
    let ds = db_images.shape();
    if ds.n == 0 {
        return Err(Error::InvalidArgument("empty retrieval database".into()));
    }
    let qs = queries.shape();
    if (ds.c, ds.h, ds.w) != (qs.c, qs.h, qs.w) {
        return Err(Error::ShapeMismatch {
            expected: qs.with_batch(ds.n),
            actual: ds,
        });
    }
    let db = context_features(db_images, mask, fill, features)?;
    let q = context_features(queries, mask, fill, features)?;
    let mut out = Vec::with_capacity(qs.n);
    let mut picks = Vec::with_capacity(qs.n);
    for (n, qf) in q.iter().enumerate() {
        let best = nn_retrieve(qf, &db)?[0].0;
        out.push(composite(&queries.item(n), &db_images.item(best), &mask.mask)?);
        picks.push(best);
    }
    Ok((Tensor::stack(&out)?, picks))
}

/// Metrics of a method on `images` under one shared mask kind.
pub fn evaluate(
    method: Method,
    gen: &mut Network,
    images: &Tensor,
    masks: &[RegionMask],
    db_images: Option<&Tensor>,
    fill: &[f64; 3],
    ids: Option<&[String]>,
) -> Result<EvalReport> {
    let hidden = mask_stack(masks)?;
    let pred = match method {
        Method::Reconstruction => inpaint(gen, images, masks, fill)?.composite,
        Method::NnOurs | Method::NnHog => {
            let db = db_images.ok_or_else(|| {
                Error::InvalidArgument("nearest-neighbor methods need a database".into())
            })?;
            let mut f = match method {
                Method::NnOurs => Features::Ours(gen),
                _ => Features::Hog,
            };
            if masks.iter().all(|m| m.mask == masks[0].mask) {
                nn_inpaint(images, &masks[0], db, fill, &mut f)?.0
            } else {
                let mut items = Vec::with_capacity(masks.len());
                for (n, m) in masks.iter().enumerate() {
                    items.push(nn_inpaint(&images.item(n), m, db, fill, &mut f)?.0);
                }
                Tensor::stack(&items)?
            }
        }
    };
    let rows = image_metrics(&pred, images, &hidden, ids)?;
    EvalReport::from_per_image(method, rows)
}

/// Masks for evaluation: the central mask, or one seeded random mask per image.
pub fn eval_masks(
    kind: MaskKind,
    n: usize,
    size: usize,
    patch: usize,
    overlap: usize,
    seed: u64,
) -> Result<Vec<RegionMask>> {
    let mut rng = RngState::new(seed);
    (0..n)
        .map(|_| crate::masking::sample_mask(kind, size, size, patch, overlap, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::central_mask;

    #[test]
    fn metric_anchors() {
        let mask = Tensor::ones([1, 1, 4, 4]);
        let target = Tensor::full([2, 3, 4, 4], 0.5);
        let pred = Tensor::full([2, 3, 4, 4], 0.6);
        assert!((psnr(&pred, &target, &mask).unwrap() - 20.0).abs() < 1e-9);
        assert!((mean_error_pct(&pred, &target, &mask, ErrorNorm::L1).unwrap() - 10.0).abs() < 1e-9);
        assert!((mean_error_pct(&pred, &target, &mask, ErrorNorm::L2).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(psnr(&target, &target, &mask).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&pred, &target, &Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn retrieval_orders_and_breaks_ties() {
        let db = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let r = nn_retrieve(&[0.0, 0.0], &db).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 0, 2]);
        assert_eq!(r[0].1, 0.0);
        assert!(nn_retrieve(&[0.0], &db).is_err());
        assert!(nn_retrieve(&[0.0], &[]).is_err());
    }

    #[test]
    fn nn_inpaint_with_constant_db() {
        let m = central_mask(32, 32, 16, 2).unwrap();
        let q = RngState::new(1).uniform([1, 3, 32, 32], 0.0, 1.0).unwrap();
        let db = Tensor::full([1, 3, 32, 32], 0.3);
        let (out, pick) = nn_inpaint(&q, &m, &db, &[0.5; 3], &mut Features::Hog).unwrap();
        assert_eq!(pick, vec![0]);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let want = if m.is_dropped(y, x) { 0.3 } else { q.get(0, c, y, x) };
                    assert_eq!(out.get(0, c, y, x), want);
                }
            }
        }
    }

    #[test]
    fn report_text_lists_images() {
        let rows = vec![
            ImageMetrics { id: "a".into(), l1_pct: 1.0, l2_pct: 2.0, psnr_db: 30.0 },
            ImageMetrics { id: "b".into(), l1_pct: 3.0, l2_pct: 4.0, psnr_db: 20.0 },
        ];
        let r = EvalReport::from_per_image(Method::NnHog, rows).unwrap();
        assert_eq!(r.mean_l1_pct, 2.0);
        assert_eq!(r.psnr_db, 25.0);
        let text = r.to_text();
        assert!(text.contains("method = nn_hog"));
        assert!(text.contains("image.b = "));
    }
}
