use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read a PPM (P6), PGM (P5) or 8-bit PNG as a `(1, 3, H, W)` tensor in
/// `[0, 1]`. Gray images are replicated to three channels and any alpha
/// channel is dropped.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decode an in-memory image; `path` is only used in error messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(bytes, path)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes, path)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: not a binary PPM/PGM or PNG file",
            path.display()
        )))
    }
}

fn planes_to_tensor(w: usize, h: usize, channels: usize, px: &[u8], keep: usize) -> Tensor {
    let mut t = Tensor::zeros([1, 3, h, w]);
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            let src = if keep == 1 { 0 } else { c };
            t.data_mut()[c * plane + i] = px[i * channels + src] as f64 / 255.0;
        }
    }
    t
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let gray = bytes[1] == b'5';
    // four header tokens (magic, width, height, maxval), comments allowed
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    i += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: maxval {maxval}, only 8-bit images are supported",
            path.display()
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(path, "empty image"));
    }
    let channels = if gray { 1 } else { 3 };
    let need = w * h * channels;
    let raster = bytes.get(i..i + need).ok_or_else(|| {
        Error::format(
            path,
            format!("truncated raster: {} of {need} bytes", bytes.len().saturating_sub(i)),
        )
    })?;
    Ok(planes_to_tensor(w, h, channels, raster, channels))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    // palette and sub-byte gray become 8-bit; 16-bit stays 16-bit
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {:?}-bit PNG, only 8-bit images are supported",
            path.display(),
            info.bit_depth
        )));
    }
    let (channels, keep) = match info.color_type {
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    Ok(planes_to_tensor(w, h, channels, px, keep))
}

fn check_item(img: &Tensor, channels: usize) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || s.c != channels {
        return Err(Error::InvalidShape(format!(
            "expected a single {channels}-channel image, got {s}"
        )));
    }
    Ok(())
}

fn interleave(img: &Tensor) -> Vec<u8> {
    let s = img.shape();
    let mut out = Vec::with_capacity(s.numel());
    for i in 0..s.plane() {
        for c in 0..s.c {
            out.push(quantize(img.data()[c * s.plane() + i]));
        }
    }
    out
}

fn write_all(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Write a `(1, 3, H, W)` image as binary PPM.
pub fn save_ppm(img: &Tensor, path: &Path) -> Result<()> {
    check_item(img, 3)?;
    let s = img.shape();
    let px = interleave(img);
    write_all(path, |w| {
        write!(w, "P6\n{} {}\n255\n", s.w, s.h)?;
        w.write_all(&px)
    })
}

/// Write a `(1, 1, H, W)` plane as binary PGM.
pub fn save_pgm(img: &Tensor, path: &Path) -> Result<()> {
    check_item(img, 1)?;
    let s = img.shape();
    let px = interleave(img);
    write_all(path, |w| {
        write!(w, "P5\n{} {}\n255\n", s.w, s.h)?;
        w.write_all(&px)
    })
}

/// Write a 1- or 3-channel image as 8-bit PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::InvalidShape(format!("cannot write {s} as PNG")));
    }
    let px = interleave(img);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.w as u32, s.h as u32);
    enc.set_color(if s.c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&px).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Write by extension: `.png`, `.pgm` (single channel) or `.ppm`.
pub fn save_image(img: &Tensor, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => save_png(img, path),
        Some("pgm") => save_pgm(img, path),
        Some("ppm") => save_ppm(img, path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: output extension must be .ppm, .pgm or .png",
            path.display()
        ))),
    }
}

/// Bilinear resize of one image (half-pixel centers, edge clamped).
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidArgument("resize to or from an empty image".into()));
    }
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    let sy = s.h as f64 / out_h as f64;
    let sx = s.w as f64 / out_w as f64;
    let coord = |o: usize, scale: f64, len: usize| {
        let f = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = f.floor() as usize;
        (i0, (i0 + 1).min(len - 1), f - i0 as f64)
    };
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_h {
                let (y0, y1, fy) = coord(y, sy, s.h);
                for x in 0..out_w {
                    let (x0, x1, fx) = coord(x, sx, s.w);
                    let top = img.get(n, c, y0, x0) * (1.0 - fx) + img.get(n, c, y0, x1) * fx;
                    let bot = img.get(n, c, y1, x0) * (1.0 - fx) + img.get(n, c, y1, x1) * fx;
                    out.set(n, c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Resize so the shorter side equals `size`, then take the centered
/// `size x size` crop.
pub fn resize_and_center_crop(img: &Tensor, size: usize) -> Result<Tensor> {
    let s = img.shape();
    if (s.h, s.w) == (size, size) {
        return Ok(img.detached());
    }
    let scaled = |long: usize, short: usize| ((long * size) as f64 / short as f64).round() as usize;
    let (nh, nw) = if s.h <= s.w {
        (size, scaled(s.w, s.h).max(size))
    } else {
        (scaled(s.h, s.w).max(size), size)
    };
    let r = resize_bilinear(img, nh, nw)?;
    r.crop((nh - size) / 2, (nw - size) / 2, size, size)
}
