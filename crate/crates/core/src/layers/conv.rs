use serde::{Deserialize, Serialize};

use super::gemm::{gemm_abt_acc, gemm_acc};
use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a 2-D convolution or transposed convolution.
///
/// Weights are laid out `(out, in, kh, kw)` for convolution and
/// `(in, out, kh, kw)` for transposed convolution, so one tensor serves both
/// a convolution and its adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel {kernel:?} and stride {stride:?} must be at least 1"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// Square kernel, stride and padding.
    pub fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            (kernel, kernel),
            (stride, stride),
            (padding, padding),
        )
    }

    pub fn conv_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::InvalidShape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok((
            (h + 2 * ph - kh) / self.stride.0 + 1,
            (w + 2 * pw - kw) / self.stride.1 + 1,
        ))
    }

    pub fn transposed_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape("empty transposed-conv input".into()));
        }
        let full_h = (h - 1) * self.stride.0 + self.kernel.0;
        let full_w = (w - 1) * self.stride.1 + self.kernel.1;
        if full_h <= 2 * self.padding.0 || full_w <= 2 * self.padding.1 {
            return Err(Error::InvalidShape(format!(
                "transposed conv of {h}x{w} with padding {:?} has no output",
                self.padding
            )));
        }
        Ok((full_h - 2 * self.padding.0, full_w - 2 * self.padding.1))
    }

    pub fn conv_weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn transposed_weight_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Option<Tensor>,
}

/// Unfold one image `(c, h, w)` into a `(c*kh*kw) x (oh*ow)` matrix.
/// Rows are ordered by channel, then kernel row, then kernel column;
/// padded taps hold zero.
fn im2col(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let p = oh * ow;
    let mut col = vec![0.0; c * kh * kw * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter form shared by transposed-conv forward and conv input gradients.
///
/// `weight` is `(cin, cout, kh, kw)`. Each output element receives its
/// contributions ordered by input channel, then kernel row, then kernel
/// column.
fn scatter(
    x: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Tensor {
    let s = x.shape();
    let ws = weight.shape();
    let (cin, cout, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    debug_assert_eq!(s.c, cin);
    let mut out = Tensor::zeros(Shape::new(s.n, cout, out_h, out_w));
    let wd = weight.data();
    for n in 0..s.n {
        for ic in 0..cin {
            let xin = &x.item_data(n)[ic * s.plane()..(ic + 1) * s.plane()];
            for oc in 0..cout {
                let base = out.index(n, oc, 0, 0);
                let oplane = &mut out.data_mut()[base..base + out_h * out_w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((ic * cout + oc) * kh + ky) * kw + kx];
                        for iy in 0..s.h {
                            let oy = (iy * stride.0 + ky) as isize - padding.0 as isize;
                            if oy < 0 || oy >= out_h as isize {
                                continue;
                            }
                            let orow = &mut oplane[oy as usize * out_w..(oy as usize + 1) * out_w];
                            let xrow = &xin[iy * s.w..(iy + 1) * s.w];
                            for (ix, &xv) in xrow.iter().enumerate() {
                                let ox = (ix * stride.1 + kx) as isize - padding.1 as isize;
                                if ox >= 0 && ox < out_w as isize {
                                    orow[ox as usize] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `dW[o, k] = sum_n sum_p dout[n, o, p] * im2col(input[n])[k, p]`
fn weight_grad(input: &Tensor, spec: &ConvSpec, dout: &Tensor, weight_shape: Shape) -> Tensor {
    let s = input.shape();
    let ds = dout.shape();
    let k = spec.kernel.0 * spec.kernel.1 * s.c;
    let p = ds.plane();
    let mut dw = vec![0.0; ds.c * k];
    for n in 0..s.n {
        let col = im2col(input.item_data(n), (s.c, s.h, s.w), spec, (ds.h, ds.w));
        gemm_abt_acc(dout.item_data(n), &col, &mut dw, ds.c, p, k);
    }
    Tensor::from_vec(weight_shape, dw).expect("weight gradient size")
}

fn bias_grad(dout: &Tensor) -> Tensor {
    let s = dout.shape();
    let mut db = vec![0.0; s.c];
    for n in 0..s.n {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * s.c + c) * s.plane();
            *acc += dout.data()[start..start + s.plane()].iter().sum::<f64>();
        }
    }
    Tensor::from_vec([1, s.c, 1, 1], db).expect("bias gradient size")
}

fn add_bias(out: &mut Tensor, bias: &Tensor) {
    let s = out.shape();
    let b = bias.data();
    for n in 0..s.n {
        for (c, &bv) in b.iter().enumerate() {
            let start = (n * s.c + c) * s.plane();
            out.data_mut()[start..start + s.plane()]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn check_params(params: &LayerParams, weight_shape: Shape, spec: &ConvSpec) -> Result<()> {
    params.weight.expect_shape(weight_shape)?;
    if let Some(b) = &params.bias {
        b.expect_shape(spec.bias_shape())?;
    }
    Ok(())
}

fn check_input(x: &Tensor, spec: &ConvSpec) -> Result<()> {
    if x.shape().c != spec.in_channels {
        return Err(Error::InvalidShape(format!(
            "input {} has {} channels, layer expects {}",
            x.shape(),
            x.shape().c,
            spec.in_channels
        )));
    }
    Ok(())
}

/// Strided, zero-padded cross-correlation (no kernel flip).
pub fn conv2d(x: &Tensor, params: &LayerParams, spec: &ConvSpec) -> Result<Tensor> {
    check_input(x, spec)?;
    check_params(params, spec.conv_weight_shape(), spec)?;
    let s = x.shape();
    let (oh, ow) = spec.conv_output_hw(s.h, s.w)?;
    let k = s.c * spec.kernel.0 * spec.kernel.1;
    let p = oh * ow;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
    for n in 0..s.n {
        let col = im2col(x.item_data(n), (s.c, s.h, s.w), spec, (oh, ow));
        gemm_acc(
            params.weight.data(),
            &col,
            out.item_data_mut(n),
            spec.out_channels,
            k,
            p,
        );
    }
    if let Some(b) = &params.bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub fn conv2d_backward(
    x: &Tensor,
    params: &LayerParams,
    spec: &ConvSpec,
    dy: &Tensor,
) -> Result<ConvGrads> {
    check_input(x, spec)?;
    check_params(params, spec.conv_weight_shape(), spec)?;
    let s = x.shape();
    let (oh, ow) = spec.conv_output_hw(s.h, s.w)?;
    dy.expect_shape(Shape::new(s.n, spec.out_channels, oh, ow))?;
    let dx = scatter(dy, &params.weight, spec.stride, spec.padding, (s.h, s.w));
    let dweight = weight_grad(x, spec, dy, spec.conv_weight_shape());
    let dbias = params.bias.as_ref().map(|_| bias_grad(dy));
    Ok(ConvGrads { dx, dweight, dbias })
}

/// Fractionally strided convolution: the adjoint of [`conv2d`] with the
/// same weight tensor, plus bias. Output extent is `(H-1)*s - 2*p + k`.
pub fn transposed_conv2d(x: &Tensor, params: &LayerParams, spec: &ConvSpec) -> Result<Tensor> {
    check_input(x, spec)?;
    check_params(params, spec.transposed_weight_shape(), spec)?;
    let s = x.shape();
    let out_hw = spec.transposed_output_hw(s.h, s.w)?;
    let mut out = scatter(x, &params.weight, spec.stride, spec.padding, out_hw);
    if let Some(b) = &params.bias {
        add_bias(&mut out, b);
    }
    Ok(out)
}

pub fn transposed_conv2d_backward(
    x: &Tensor,
    params: &LayerParams,
    spec: &ConvSpec,
    dy: &Tensor,
) -> Result<ConvGrads> {
    check_input(x, spec)?;
    check_params(params, spec.transposed_weight_shape(), spec)?;
    let s = x.shape();
    let (oh, ow) = spec.transposed_output_hw(s.h, s.w)?;
    dy.expect_shape(Shape::new(s.n, spec.out_channels, oh, ow))?;

    // Input gradient is the forward convolution of dy with the same weights.
    let adjoint = ConvSpec {
        in_channels: spec.out_channels,
        out_channels: spec.in_channels,
        ..*spec
    };
    let no_bias = LayerParams::new("", params.weight.detached(), None);
    let dx = conv2d(dy, &no_bias, &adjoint)?;
    debug_assert_eq!(dx.shape(), s);
    let dweight = weight_grad(dy, &adjoint, x, spec.transposed_weight_shape());
    let dbias = params.bias.as_ref().map(|_| bias_grad(dy));
    Ok(ConvGrads { dx, dweight, dbias })
}
