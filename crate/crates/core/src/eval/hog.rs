use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HOG_CELL: usize = 8;
pub const HOG_BINS: usize = 9;
/// Cells per block side; blocks slide one cell at a time.
pub const HOG_BLOCK: usize = 2;
const HOG_EPS: f64 = 1e-6;

/// Descriptor length for an `h x w` image.
pub fn hog_len(h: usize, w: usize, cell: usize, bins: usize) -> usize {
    let (cy, cx) = (h / cell, w / cell);
    if cy < HOG_BLOCK || cx < HOG_BLOCK {
        return 0;
    }
    (cy - HOG_BLOCK + 1) * (cx - HOG_BLOCK + 1) * HOG_BLOCK * HOG_BLOCK * bins
}

fn luminance(img: &Tensor) -> Vec<f64> {
    let s = img.shape();
    let p = s.plane();
    let d = img.data();
    (0..p)
        .map(|i| 0.299 * d[i] + 0.587 * d[p + i] + 0.114 * d[2 * p + i])
        .collect()
}

/// Histogram-of-oriented-gradients descriptor of one `(1, 3, H, W)` image.
///
/// Gradients use the centered `[-1, 0, 1]` filter with clamped borders.
/// Unsigned orientations vote into `bins` bins centered at multiples of
/// `180 / bins` degrees, split linearly between the two nearest bins and
/// weighted by magnitude. Cells that do not fit are dropped. Each 2x2-cell
/// block is L2-normalized as `v / sqrt(|v|^2 + eps^2)`.
pub fn hog_descriptor(img: &Tensor, cell: usize, bins: usize) -> Result<Vec<f64>> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::InvalidShape(format!("HOG expects one RGB image, got {s}")));
    }
    if cell == 0 || bins == 0 {
        return Err(Error::InvalidArgument("cell size and bin count must be positive".into()));
    }
    let (cy, cx) = (s.h / cell, s.w / cell);
    if cy < HOG_BLOCK || cx < HOG_BLOCK {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than one {HOG_BLOCK}x{HOG_BLOCK} block of {cell}px cells",
            s.h, s.w
        )));
    }
    let lum = luminance(img);
    let at = |y: usize, x: usize| lum[y * s.w + x];
    let width = 180.0 / bins as f64;
    let mut hist = vec![0.0; cy * cx * bins];
    for y in 0..cy * cell {
        for x in 0..cx * cell {
            let gx = at(y, (x + 1).min(s.w - 1)) - at(y, x.saturating_sub(1));
            let gy = at((y + 1).min(s.h - 1), x) - at(y.saturating_sub(1), x);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let pos = angle / width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = lo as usize % bins;
            let b1 = (b0 + 1) % bins;
            let base = ((y / cell) * cx + x / cell) * bins;
            hist[base + b0] += mag * (1.0 - frac);
            hist[base + b1] += mag * frac;
        }
    }
    let mut out = Vec::with_capacity(hog_len(s.h, s.w, cell, bins));
    for by in 0..=cy - HOG_BLOCK {
        for bx in 0..=cx - HOG_BLOCK {
            let start = out.len();
            for dy in 0..HOG_BLOCK {
                for dx in 0..HOG_BLOCK {
                    let base = ((by + dy) * cx + bx + dx) * bins;
                    out.extend_from_slice(&hist[base..base + bins]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + HOG_EPS * HOG_EPS).sqrt();
            out[start..].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_zero() {
        let d = hog_descriptor(&Tensor::full([1, 3, 32, 32], 0.4), 8, 9).unwrap();
        assert_eq!(d.len(), 324);
        assert_eq!(hog_len(32, 32, 8, 9), 3 * 3 * 2 * 2 * 9);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_edge_votes_horizontal_gradient_bin() {
        let mut img = Tensor::zeros([1, 3, 16, 16]);
        for c in 0..3 {
            for y in 0..16 {
                for x in 8..16 {
                    img.set(0, c, y, x, 1.0);
                }
            }
        }
        let d = hog_descriptor(&img, 8, 9).unwrap();
        let cell = &d[..9];
        let argmax = (0..9).max_by(|&a, &b| cell[a].total_cmp(&cell[b])).unwrap();
        assert_eq!(argmax, 0);
        assert!(cell[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_rejected() {
        assert!(hog_descriptor(&Tensor::zeros([1, 3, 15, 32]), 8, 9).is_err());
    }
}
