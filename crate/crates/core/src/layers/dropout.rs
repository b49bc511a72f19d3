use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Per-element multiplier applied in the forward pass: `0` for dropped
/// elements, `1 / (1 - rate)` for survivors, `1` everywhere in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

impl DropoutMask {
    pub fn survivor_fraction(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().filter(|&&v| v != 0.0).count() as f64 / self.0.len() as f64
    }
}

pub fn dropout(
    x: &Tensor,
    rate: f64,
    rng: &mut RngState,
    mode: Mode,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.detached(), DropoutMask(vec![1.0; x.numel()])));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let y = Tensor::from_vec(
        x.shape(),
        x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
    )?;
    Ok((y, DropoutMask(mask)))
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Tensor) -> Result<Tensor> {
    if mask.0.len() != dy.numel() {
        return Err(Error::InvalidShape(format!(
            "dropout mask has {} entries, gradient {}",
            mask.0.len(),
            dy.numel()
        )));
    }
    Tensor::from_vec(
        dy.shape(),
        dy.data().iter().zip(&mask.0).map(|(g, m)| g * m).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let x = RngState::new(1).uniform([1, 2, 4, 4], -1.0, 1.0).unwrap();
        let mut rng = RngState::new(2);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Train).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, &mut rng, Mode::Eval).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, Mode::Train).is_err());
    }

    #[test]
    fn survivor_fraction_and_expectation() {
        let x = Tensor::ones([1, 1, 1, 100_000]);
        let (y, mask) = dropout(&x, 0.5, &mut RngState::new(77), Mode::Train).unwrap();
        assert!((mask.survivor_fraction() - 0.5).abs() < 0.01);
        assert!((y.mean() - 1.0).abs() < 0.02);
    }
}
