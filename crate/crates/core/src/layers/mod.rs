//! Forward and backward passes for every layer the generator and
//! discriminator use.
//!
//! Each layer is a set of free functions: a forward pass returning the
//! output (plus whatever it must remember for the backward pass) and a
//! backward pass that takes that cache and the upstream gradient. The
//! stateful wiring lives in [`crate::model`].

mod activation;
mod batchnorm;
mod channelwise;
mod conv;
mod dropout;
mod gemm;
mod linear;
mod pool;

use serde::{Deserialize, Serialize};

use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub use activation::{activation_backward, activation_forward, Activation};
pub use batchnorm::{
    batchnorm2d_backward, batchnorm2d_eval, batchnorm2d_train, BatchNormCache, BatchNormGrads,
    BatchNormStats, BN_EPS, BN_MOMENTUM,
};
pub use channelwise::{
    channelwise_fc, channelwise_fc_backward, channelwise_weight_count, ChannelwiseGrads,
};
pub use conv::{
    conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads, ConvSpec,
};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use linear::{linear, linear_backward, LinearGrads};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndices};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Learned state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub aux: Option<BatchNormStats>,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, weight: Tensor, bias: Option<Tensor>) -> Self {
        LayerParams {
            name: name.into(),
            weight,
            bias,
            aux: None,
        }
    }

    /// Gaussian weights with zero bias.
    pub fn gaussian(
        name: impl Into<String>,
        weight_shape: Shape,
        bias_shape: Option<Shape>,
        rng: &mut RngState,
    ) -> Self {
        let weight = rng
            .normal(weight_shape, 0.0, INIT_STD)
            .expect("INIT_STD is non-negative");
        LayerParams::new(name, weight, bias_shape.map(Tensor::zeros))
    }

    /// Batch-norm parameters: scale 1, shift 0, fresh running statistics.
    pub fn batchnorm(name: impl Into<String>, channels: usize) -> Self {
        LayerParams {
            name: name.into(),
            weight: Tensor::ones([1, channels, 1, 1]),
            bias: Some(Tensor::zeros([1, channels, 1, 1])),
            aux: Some(BatchNormStats::new(channels)),
        }
    }

    /// Learned tensors only (weight, then bias).
    pub fn learned_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }

    pub fn learned(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.learned_mut().for_each(Tensor::zero_grad);
    }

    /// Weight count excluding bias.
    pub fn weight_count(&self) -> usize {
        self.weight.numel()
    }
}
