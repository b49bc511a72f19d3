//! Channel-wise fully-connected layer.
//!
//! For an input of `m` feature maps of size `n x n`, each map is flattened
//! and passed through its own dense `n^2 -> n^2` matrix. No weight connects
//! two different maps, so the layer holds `m * n^4` weights instead of the
//! `m^2 * n^4` of a full dense layer. Weight shape is `(1, m, n^2, n^2)`,
//! bias `(1, m, n, n)`.

use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct ChannelwiseGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

/// Weights (excluding bias) of a channel-wise layer over `m` maps of `n x n`.
pub const fn channelwise_weight_count(m: usize, n: usize) -> usize {
    m * n * n * n * n
}

fn check(x: &Tensor, params: &LayerParams) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.h != s.w {
        return Err(Error::InvalidShape(format!(
            "channel-wise layer needs square maps, got {s}"
        )));
    }
    let (m, k) = (s.c, s.plane());
    params.weight.expect_shape(Shape::new(1, m, k, k))?;
    if let Some(b) = &params.bias {
        b.expect_shape(Shape::new(1, m, s.h, s.w))?;
    }
    Ok((m, k))
}

pub fn channelwise_fc(x: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (m, k) = check(x, params)?;
    let s = x.shape();
    let w = params.weight.data();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..m {
            let xin = &x.item_data(n)[c * k..(c + 1) * k];
            let wc = &w[c * k * k..(c + 1) * k * k];
            let base = out.index(n, c, 0, 0);
            let o = &mut out.data_mut()[base..base + k];
            for (i, ov) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (wv, xv) in wc[i * k..(i + 1) * k].iter().zip(xin) {
                    acc += wv * xv;
                }
                *ov = acc;
            }
            if let Some(b) = &params.bias {
                let bc = &b.data()[c * k..(c + 1) * k];
                o.iter_mut().zip(bc).for_each(|(v, bv)| *v += bv);
            }
        }
    }
    Ok(out)
}

pub fn channelwise_fc_backward(
    x: &Tensor,
    params: &LayerParams,
    dy: &Tensor,
) -> Result<ChannelwiseGrads> {
    let (m, k) = check(x, params)?;
    let s = x.shape();
    dy.expect_shape(s)?;
    let w = params.weight.data();
    let mut dx = Tensor::zeros(s);
    let mut dw = vec![0.0; m * k * k];
    let mut db = vec![0.0; m * k];
    for n in 0..s.n {
        for c in 0..m {
            let xin = &x.item_data(n)[c * k..(c + 1) * k];
            let g = &dy.item_data(n)[c * k..(c + 1) * k];
            let wc = &w[c * k * k..(c + 1) * k * k];
            let base = dx.index(n, c, 0, 0);
            let dxc = &mut dx.data_mut()[base..base + k];
            for (i, &gi) in g.iter().enumerate() {
                db[c * k + i] += gi;
                let row = &wc[i * k..(i + 1) * k];
                let dwrow = &mut dw[(c * k + i) * k..(c * k + i + 1) * k];
                for j in 0..k {
                    dxc[j] += row[j] * gi;
                    dwrow[j] += gi * xin[j];
                }
            }
        }
    }
    Ok(ChannelwiseGrads {
        dx,
        dweight: Tensor::from_vec(params.weight.shape(), dw)?,
        dbias: Tensor::from_vec([1, m, s.h, s.w], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn identity_params(m: usize, n: usize) -> LayerParams {
        let k = n * n;
        let mut w = Tensor::zeros([1, m, k, k]);
        for c in 0..m {
            for i in 0..k {
                w.set(0, c, i, i, 1.0);
            }
        }
        LayerParams::new("cw", w, Some(Tensor::zeros([1, m, n, n])))
    }

    #[test]
    fn full_scale_weight_count() {
        assert_eq!(channelwise_weight_count(256, 6), 331_776);
        assert_eq!(channelwise_weight_count(256, 4), 65_536);
    }

    #[test]
    fn identity_blocks_pass_input_through() {
        let x = RngState::new(9).uniform([2, 3, 4, 4], -1.0, 1.0).unwrap();
        let y = channelwise_fc(&x, &identity_params(3, 4)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn non_square_input_rejected() {
        let p = identity_params(1, 2);
        assert!(channelwise_fc(&Tensor::zeros([1, 1, 2, 3]), &p).is_err());
        assert!(channelwise_fc(&Tensor::zeros([1, 2, 2, 2]), &p).is_err());
    }
}
