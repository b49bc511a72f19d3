use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Flat input index of the maximum chosen for each output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices(pub Vec<usize>);

pub fn maxpool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let s = x.shape();
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool kernel and stride must be positive".into()));
    }
    if kernel > s.h || kernel > s.w {
        return Err(Error::InvalidShape(format!(
            "pool window {kernel} larger than input {s}"
        )));
    }
    let (oh, ow) = ((s.h - kernel) / stride + 1, (s.w - kernel) / stride + 1);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut idx = Vec::with_capacity(out.numel());
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.index(n, c, oy * stride, ox * stride);
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = x.index(n, c, oy * stride + ky, ox * stride + kx);
                            // strict comparison keeps the first maximum on ties
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                    }
                    out.data_mut()[o] = x.data()[best];
                    idx.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, PoolIndices(idx)))
}

pub fn maxpool2d_backward(indices: &PoolIndices, input_shape: Shape, dy: &Tensor) -> Result<Tensor> {
    if indices.0.len() != dy.numel() {
        return Err(Error::InvalidShape(format!(
            "pool cache has {} entries, gradient {}",
            indices.0.len(),
            dy.numel()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in indices.0.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}
