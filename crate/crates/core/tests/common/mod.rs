//! Naive reference implementations shared by the integration tests.
//!
//! Each oracle accumulates in the same order as the library kernels
//! (input channel, then kernel row, then kernel column, bias last), so
//! results can be compared bit for bit.

#![allow(dead_code)]

use cenc_core::layers::ConvSpec;
use cenc_core::{LayerParams, RngState, Shape, Tensor};

/// Direct-loop cross-correlation with zero padding.
pub fn naive_conv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let s = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let oh = (s.h + 2 * ph - kh) / sh + 1;
    let ow = (s.w + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::zeros([s.n, spec.out_channels, oh, ow]);
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..s.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc += weight.get(o, c, ky, kx) * x.get(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.get(0, o, 0, 0);
                    }
                    out.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Gather form of the transposed convolution: every output pixel sums the
/// input pixels whose stride-spaced kernel footprint covers it.
/// `weight` is `(cin, cout, kh, kw)`.
pub fn naive_transposed(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let s = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let oh = (s.h - 1) * sh + kh - 2 * ph;
    let ow = (s.w - 1) * sw + kw - 2 * pw;
    let mut out = Tensor::zeros([s.n, spec.out_channels, oh, ow]);
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..s.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let ty = oy as isize + ph as isize - ky as isize;
                                let tx = ox as isize + pw as isize - kx as isize;
                                if ty < 0 || tx < 0 || ty % sh as isize != 0 || tx % sw as isize != 0 {
                                    continue;
                                }
                                let (iy, ix) = (ty as usize / sh, tx as usize / sw);
                                if iy >= s.h || ix >= s.w {
                                    continue;
                                }
                                acc += weight.get(c, o, ky, kx) * x.get(n, c, iy, ix);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.get(0, o, 0, 0);
                    }
                    out.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// One dense `n^2 x n^2` matrix per feature map; weight `(1, m, n^2, n^2)`.
pub fn naive_channelwise(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let s = x.shape();
    let k = s.h * s.w;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += weight.get(0, c, i, j) * x.get(n, c, j / s.w, j % s.w);
                }
                if let Some(b) = bias {
                    acc += b.get(0, c, i / s.w, i % s.w);
                }
                out.set(n, c, i / s.w, i % s.w, acc);
            }
        }
    }
    out
}

pub fn naive_maxpool(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let s = x.shape();
    let oh = (s.h - kernel) / stride + 1;
    let ow = (s.w - kernel) / stride + 1;
    let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            best = best.max(x.get(n, c, oy * stride + ky, ox * stride + kx));
                        }
                    }
                    out.set(n, c, oy, ox, best);
                }
            }
        }
    }
    out
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn uniform(rng: &mut RngState, shape: impl Into<Shape>) -> Tensor {
    rng.uniform(shape, -1.0, 1.0).unwrap()
}

/// Random conv geometry and parameters whose output is non-empty.
pub fn random_conv(rng: &mut RngState) -> (Tensor, LayerParams, ConvSpec) {
    let cin = rng.gen_range(1, 4);
    let cout = rng.gen_range(1, 4);
    let k = rng.gen_range(1, 5);
    let stride = rng.gen_range(1, 3);
    let pad = rng.gen_range(0, k);
    let h = rng.gen_range(k.max(2), 9);
    let w = rng.gen_range(k.max(2), 9);
    let n = rng.gen_range(1, 3);
    let spec = ConvSpec::square(cin, cout, k, stride, pad).unwrap();
    let x = uniform(rng, [n, cin, h, w]);
    let weight = uniform(rng, spec.conv_weight_shape());
    let bias = uniform(rng, spec.bias_shape());
    (x, LayerParams::new("conv", weight, Some(bias)), spec)
}

/// Random transposed-conv geometry and parameters with a non-empty output.
pub fn random_transposed(rng: &mut RngState) -> (Tensor, LayerParams, ConvSpec) {
    loop {
        let cin = rng.gen_range(1, 4);
        let cout = rng.gen_range(1, 4);
        let k = rng.gen_range(1, 5);
        let stride = rng.gen_range(1, 3);
        let pad = rng.gen_range(0, k);
        let h = rng.gen_range(1, 6);
        let w = rng.gen_range(1, 6);
        let n = rng.gen_range(1, 3);
        let spec = ConvSpec::square(cin, cout, k, stride, pad).unwrap();
        if spec.transposed_output_hw(h, w).is_err() {
            continue;
        }
        let x = uniform(rng, [n, cin, h, w]);
        let weight = uniform(rng, spec.transposed_weight_shape());
        let bias = uniform(rng, spec.bias_shape());
        return (x, LayerParams::new("convT", weight, Some(bias)), spec);
    }
}
