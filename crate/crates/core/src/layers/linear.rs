use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::tensor::{Shape, Tensor};

/// Weight `(1, 1, out, in)`, bias `(1, out, 1, 1)`. Inputs are flattened per
/// batch item; the output is `(N, out, 1, 1)`.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

fn dims(x: &Tensor, params: &LayerParams) -> Result<(usize, usize)> {
    let ws = params.weight.shape();
    let (out, inp) = (ws.h, ws.w);
    if ws.n != 1 || ws.c != 1 {
        return Err(Error::InvalidShape(format!("linear weight must be (1, 1, out, in), got {ws}")));
    }
    if x.shape().item_len() != inp {
        return Err(Error::InvalidShape(format!(
            "linear layer expects {inp} features, input {} has {}",
            x.shape(),
            x.shape().item_len()
        )));
    }
    if let Some(b) = &params.bias {
        b.expect_shape(Shape::new(1, out, 1, 1))?;
    }
    Ok((out, inp))
}

/// `y = x W^T + b`
pub fn linear(x: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (out, inp) = dims(x, params)?;
    let n = x.shape().n;
    let w = params.weight.data();
    let mut y = vec![0.0; n * out];
    for b in 0..n {
        let xi = x.item_data(b);
        for o in 0..out {
            let mut acc = 0.0;
            for (wv, xv) in w[o * inp..(o + 1) * inp].iter().zip(xi) {
                acc += wv * xv;
            }
            if let Some(bias) = &params.bias {
                acc += bias.data()[o];
            }
            y[b * out + o] = acc;
        }
    }
    Tensor::from_vec([n, out, 1, 1], y)
}

pub fn linear_backward(x: &Tensor, params: &LayerParams, dy: &Tensor) -> Result<LinearGrads> {
    let (out, inp) = dims(x, params)?;
    let n = x.shape().n;
    dy.expect_shape(Shape::new(n, out, 1, 1))?;
    let w = params.weight.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for b in 0..n {
        let xi = x.item_data(b).to_vec();
        let g = dy.item_data(b);
        let dxi = dx.item_data_mut(b);
        for o in 0..out {
            db[o] += g[o];
            for j in 0..inp {
                dxi[j] += g[o] * w[o * inp + j];
                dw[o * inp + j] += g[o] * xi[j];
            }
        }
    }
    Ok(LinearGrads {
        dx,
        dweight: Tensor::from_vec(params.weight.shape(), dw)?,
        dbias: Tensor::from_vec([1, out, 1, 1], db)?,
    })
}
