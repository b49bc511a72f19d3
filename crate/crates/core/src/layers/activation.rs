use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Slope applied to negative inputs, in `(0, 1)`.
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn leaky(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky relu slope must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Activation::LeakyRelu(alpha))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::LeakyRelu(a) => x.map(|v| if v > 0.0 { v } else { a * v }),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// `input` and `output` are the tensors seen and produced by the forward pass.
pub fn activation_backward(
    kind: Activation,
    input: &Tensor,
    output: &Tensor,
    dy: &Tensor,
) -> Result<Tensor> {
    dy.expect_shape(input.shape())?;
    let local: Vec<f64> = match kind {
        Activation::Relu => input
            .data()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect(),
        Activation::LeakyRelu(a) => input
            .data()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { a })
            .collect(),
        Activation::Sigmoid => output.data().iter().map(|&s| s * (1.0 - s)).collect(),
    };
    Tensor::from_vec(
        dy.shape(),
        dy.data().iter().zip(&local).map(|(g, l)| g * l).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_grad;

    fn pair() -> Tensor {
        Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap()
    }

    #[test]
    fn relu_and_leaky_values() {
        assert_eq!(activation_forward(&pair(), Activation::Relu).data(), &[0.0, 2.0]);
        let leaky = Activation::leaky(0.2).unwrap();
        assert_eq!(activation_forward(&pair(), leaky).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn leaky_slope_validated() {
        assert!(Activation::leaky(0.0).is_err());
        assert!(Activation::leaky(1.0).is_err());
    }

    #[test]
    fn leaky_gradient_at_minus_one() {
        let kind = Activation::leaky(0.2).unwrap();
        let x = Tensor::full([1, 1, 1, 1], -1.0);
        let y = activation_forward(&x, kind);
        let g = activation_backward(kind, &x, &y, &Tensor::ones([1, 1, 1, 1])).unwrap();
        let num = finite_diff_grad(|t| activation_forward(t, kind).sum(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 0.2).abs() < 1e-12);
        assert!((num.data()[0] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
