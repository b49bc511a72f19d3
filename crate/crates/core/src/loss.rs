//! Training objectives: masked reconstruction, the adversarial pair, and
//! their weighted sum. Every loss returns its value together with the
//! gradient with respect to its input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const LAMBDA_REC: f64 = 0.999;
pub const LAMBDA_ADV: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecNorm {
    #[default]
    L2,
    L1,
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    /// Gradient of `value` with respect to the loss input.
    pub grad: Tensor,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    pub value: f64,
    pub grad_real: Tensor,
    pub grad_fake: Tensor,
}

/// Weighted masked L2 distance, normalized by the number of weighted
/// values (weighted pixels x channels x batch).
pub fn reconstruction_loss(pred: &Tensor, target: &Tensor, weights: &Tensor) -> Result<LossValue> {
    reconstruction_loss_with(pred, target, weights, RecNorm::L2)
}

pub fn reconstruction_loss_with(
    pred: &Tensor,
    target: &Tensor,
    weights: &Tensor,
    norm: RecNorm,
) -> Result<LossValue> {
    let s = pred.shape();
    target.expect_shape(s)?;
    let ws = weights.shape();
    if ws.c != 1 || (ws.h, ws.w) != (s.h, s.w) || (ws.n != 1 && ws.n != s.n) {
        return Err(Error::ShapeMismatch {
            expected: Shape::new(s.n, 1, s.h, s.w),
            actual: ws,
        });
    }
    let weighted = weights.data().iter().filter(|&&w| w > 0.0).count();
    if weighted == 0 {
        return Err(Error::InvalidArgument("weight map has no positive entries".into()));
    }
    let repeats = if ws.n == 1 { s.n } else { 1 };
    let normalizer = (weighted * s.c * repeats) as f64;

    let mut value = 0.0;
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        let wplane = weights.item_data(if ws.n == 1 { 0 } else { n });
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            for (i, &w) in wplane.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let d = pred.data()[start + i] - target.data()[start + i];
                let (v, g) = match norm {
                    RecNorm::L2 => (w * d * d, 2.0 * w * d),
                    RecNorm::L1 => (w * d.abs(), w * sign(d)),
                };
                value += v;
                grad.data_mut()[start + i] = g / normalizer;
            }
        }
    }
    Ok(LossValue {
        value: value / normalizer,
        grad,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-mean(log D(real)) - mean(log(1 - D(fake)))`, the negated logistic
/// likelihood the discriminator maximizes.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<DiscriminatorLoss> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::InvalidArgument("empty discriminator output".into()));
    }
    let nr = d_real.numel() as f64;
    let nf = d_fake.numel() as f64;
    let real: f64 = d_real.data().iter().map(|&p| -clamp(p).ln()).sum::<f64>() / nr;
    let fake: f64 = d_fake.data().iter().map(|&p| -(1.0 - clamp(p)).ln()).sum::<f64>() / nf;
    Ok(DiscriminatorLoss {
        value: real + fake,
        grad_real: d_real.map(|p| -1.0 / (nr * clamp(p))),
        grad_fake: d_fake.map(|p| 1.0 / (nf * (1.0 - clamp(p)))),
    })
}

/// Non-saturating generator objective `-mean(log D(F(x)))`.
pub fn generator_adv_loss(d_fake: &Tensor) -> Result<LossValue> {
    if d_fake.is_empty() {
        return Err(Error::InvalidArgument("empty discriminator output".into()));
    }
    let n = d_fake.numel() as f64;
    Ok(LossValue {
        value: d_fake.data().iter().map(|&p| -clamp(p).ln()).sum::<f64>() / n,
        grad: d_fake.map(|p| -1.0 / (n * clamp(p))),
    })
}

/// `lambda_rec * rec + lambda_adv * adv`. Both gradients must be taken with
/// respect to the same tensor (the generator's prediction).
pub fn joint_loss(
    rec: &LossValue,
    adv: &LossValue,
    lambda_rec: f64,
    lambda_adv: f64,
) -> Result<LossValue> {
    if !(lambda_rec >= 0.0 && lambda_adv >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss weights must be non-negative, got ({lambda_rec}, {lambda_adv})"
        )));
    }
    rec.grad.expect_shape(adv.grad.shape())?;
    let grad = Tensor::from_vec(
        rec.grad.shape(),
        rec.grad
            .data()
            .iter()
            .zip(adv.grad.data())
            .map(|(r, a)| lambda_rec * r + lambda_adv * a)
            .collect(),
    )?;
    Ok(LossValue {
        value: lambda_rec * rec.value + lambda_adv * adv.value,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_prediction_has_zero_loss() {
        let t = Tensor::full([1, 3, 4, 4], 0.3);
        let w = Tensor::ones([1, 1, 4, 4]);
        let l = reconstruction_loss(&t, &t, &w).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_displacement_has_unit_loss() {
        let mut w = Tensor::zeros([1, 1, 4, 4]);
        for y in 1..3 {
            for x in 1..3 {
                w.set(0, 0, y, x, 1.0);
            }
        }
        let l = reconstruction_loss(&Tensor::zeros([2, 3, 4, 4]), &Tensor::ones([2, 3, 4, 4]), &w).unwrap();
        assert_eq!(l.value, 1.0);
        let l1 = reconstruction_loss_with(
            &Tensor::zeros([2, 3, 4, 4]),
            &Tensor::ones([2, 3, 4, 4]),
            &w,
            RecNorm::L1,
        )
        .unwrap();
        assert_eq!(l1.value, 1.0);
    }

    #[test]
    fn empty_weight_map_rejected() {
        let t = Tensor::zeros([1, 3, 4, 4]);
        assert!(reconstruction_loss(&t, &t, &Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn discriminator_anchor_values() {
        let half = Tensor::full([8, 1, 1, 1], 0.5);
        let d = discriminator_loss(&half, &half).unwrap();
        assert!((d.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = discriminator_loss(&Tensor::ones([4, 1, 1, 1]), &Tensor::zeros([4, 1, 1, 1])).unwrap();
        assert!(perfect.value < 1e-6);
    }

    #[test]
    fn generator_adv_anchor_values() {
        let g = generator_adv_loss(&Tensor::full([1, 1, 1, 1], 0.5)).unwrap();
        assert!((g.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(generator_adv_loss(&Tensor::ones([2, 1, 1, 1])).unwrap().value < 1e-6);
        let g = generator_adv_loss(&Tensor::full([4, 1, 1, 1], 0.25)).unwrap();
        assert!(g.grad.data().iter().all(|&v| (v - (-4.0 / 4.0)).abs() < 1e-15));
    }

    #[test]
    fn joint_combines_linearly() {
        let rec = LossValue { value: 2.0, grad: Tensor::full([1, 1, 1, 2], 1.0) };
        let adv = LossValue { value: 1.0, grad: Tensor::full([1, 1, 1, 2], 3.0) };
        let j = joint_loss(&rec, &adv, LAMBDA_REC, LAMBDA_ADV).unwrap();
        assert!((j.value - 1.999).abs() < 1e-15);
        assert!((j.grad.data()[0] - (0.999 + 0.003)).abs() < 1e-15);
        assert_eq!(joint_loss(&rec, &adv, 1.0, 0.0).unwrap().value, rec.value);
        assert!(joint_loss(&rec, &adv, -1.0, 0.0).is_err());
    }
}
