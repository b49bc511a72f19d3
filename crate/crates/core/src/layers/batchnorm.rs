use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::tensor::{Shape, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics used in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

fn stats(params: &LayerParams) -> Result<&BatchNormStats> {
    params
        .aux
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no batch-norm statistics", params.name)))
}

fn check(x: &Tensor, params: &LayerParams) -> Result<()> {
    let c = x.shape().c;
    params.weight.expect_shape(Shape::new(1, c, 1, 1))?;
    if let Some(b) = &params.bias {
        b.expect_shape(Shape::new(1, c, 1, 1))?;
    }
    let st = stats(params)?;
    if st.running_mean.len() != c || !(st.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "batch-norm {} expects {} channels with eps > 0",
            params.name,
            st.running_mean.len()
        )));
    }
    Ok(())
}

fn affine(normalized: &Tensor, params: &LayerParams) -> Tensor {
    let s = normalized.shape();
    let mut out = normalized.detached();
    let gamma = params.weight.data();
    let beta = params.bias.as_ref().map(|b| b.data());
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            let (g, b) = (gamma[c], beta.map_or(0.0, |b| b[c]));
            out.data_mut()[start..start + s.plane()]
                .iter_mut()
                .for_each(|v| *v = *v * g + b);
        }
    }
    out
}

/// Normalize with batch statistics and fold them into the running averages.
pub fn batchnorm2d_train(x: &Tensor, params: &mut LayerParams) -> Result<(Tensor, BatchNormCache)> {
    check(x, params)?;
    let s = x.shape();
    let count = s.n * s.plane();
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch norm needs at least two values per channel in train mode, input is {s}"
        )));
    }
    let eps = stats(params)?.eps;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for n in 0..s.n {
            let start = (n * s.c + c) * s.plane();
            acc += x.data()[start..start + s.plane()].iter().sum::<f64>();
        }
        mean[c] = acc / count as f64;
        let mut acc = 0.0;
        for n in 0..s.n {
            let start = (n * s.c + c) * s.plane();
            acc += x.data()[start..start + s.plane()]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
        var[c] = acc / count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = x.detached();
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            normalized.data_mut()[start..start + s.plane()]
                .iter_mut()
                .for_each(|v| *v = (*v - mean[c]) * inv_std[c]);
        }
    }
    let st = params.aux.as_mut().expect("checked above");
    let unbias = count as f64 / (count - 1) as f64;
    for c in 0..s.c {
        st.running_mean[c] = (1.0 - st.momentum) * st.running_mean[c] + st.momentum * mean[c];
        st.running_var[c] = (1.0 - st.momentum) * st.running_var[c] + st.momentum * var[c] * unbias;
    }
    let out = affine(&normalized, params);
    Ok((out, BatchNormCache { normalized, inv_std }))
}

/// Normalize with the running statistics.
pub fn batchnorm2d_eval(x: &Tensor, params: &LayerParams) -> Result<Tensor> {
    check(x, params)?;
    let s = x.shape();
    let st = stats(params)?;
    let mut normalized = x.detached();
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            let inv = 1.0 / (st.running_var[c] + st.eps).sqrt();
            let m = st.running_mean[c];
            normalized.data_mut()[start..start + s.plane()]
                .iter_mut()
                .for_each(|v| *v = (*v - m) * inv);
        }
    }
    Ok(affine(&normalized, params))
}

/// Backward pass through batch statistics:
/// `dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))`.
pub fn batchnorm2d_backward(
    cache: &BatchNormCache,
    params: &LayerParams,
    dy: &Tensor,
) -> Result<BatchNormGrads> {
    let s = cache.normalized.shape();
    dy.expect_shape(s)?;
    let count = (s.n * s.plane()) as f64;
    let xhat = cache.normalized.data();
    let gamma = params.weight.data();
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for i in start..start + s.plane() {
                dbeta[c] += dy.data()[i];
                dgamma[c] += dy.data()[i] * xhat[i];
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            let k = gamma[c] * cache.inv_std[c];
            let (mdy, mdyx) = (dbeta[c] / count, dgamma[c] / count);
            for i in start..start + s.plane() {
                dx.data_mut()[i] = k * (dy.data()[i] - mdy - xhat[i] * mdyx);
            }
        }
    }
    Ok(BatchNormGrads {
        dx,
        dgamma: Tensor::from_vec([1, s.c, 1, 1], dgamma)?,
        dbeta: Tensor::from_vec([1, s.c, 1, 1], dbeta)?,
    })
}
