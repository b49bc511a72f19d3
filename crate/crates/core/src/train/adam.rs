use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{Shape, Tensor};

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters and step counter; the moment buffers live alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
        }
    }
}

/// First and second moment estimates for every learned tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[Shape]) -> Self {
        AdamState {
            hyper: AdamHyper::default(),
            m: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_network(net: &Network) -> Self {
        let shapes: Vec<Shape> = net.learned_tensors().iter().map(|t| t.shape()).collect();
        AdamState::new(&shapes)
    }

    pub fn t(&self) -> u64 {
        self.hyper.t
    }

    /// Bias-corrected update of `params` from their accumulated gradients.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            p.expect_shape(self.m[i].shape())?;
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of tensor {i}")));
                }
            }
        }
        let h = &mut self.hyper;
        h.t += 1;
        let c1 = 1.0 - h.beta1.powi(h.t as i32);
        let c2 = 1.0 - h.beta2.powi(h.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let (data, grad) = p.data_and_grad_mut();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                data[j] -= lr * mh / (vh.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

/// One optimizer step over every learned tensor of `net`.
pub fn adam_step(net: &mut Network, state: &mut AdamState, lr: f64) -> Result<()> {
    let mut params = net.learned_tensors_mut();
    state.step(&mut params, lr)
}
