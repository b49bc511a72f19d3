//! Central-difference gradients and the built-in gradient-check suite.
//!
//! `finite_diff_grad` is the numerical oracle every backward pass in the
//! crate is verified against. [`run_suite`] bundles the per-layer,
//! per-loss and end-to-end checks so they can be run from the command line.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{self, Activation, ConvSpec, LayerParams};
use crate::loss;
use crate::model::{build_discriminator, build_generator, GeneratorConfig, MaskKind};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Result<Tensor> {
    let all: Vec<usize> = (0..x.numel()).collect();
    let g = finite_diff_at(&mut f, x, eps, &all)?;
    Tensor::from_vec(x.shape(), g)
}

/// Central differences at the listed coordinates only.
pub fn finite_diff_at(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    eps: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.detached();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "function value at coordinate {i}: {plus}, {minus}"
                )));
            }
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
pub const EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub relative_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.relative_error <= self.tolerance
    }
}

struct Suite {
    rng: RngState,
    results: Vec<CheckResult>,
}

impl Suite {
    fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64], tolerance: f64) {
        self.results.push(CheckResult {
            name: name.to_string(),
            relative_error: relative_error(analytic, numeric),
            tolerance,
        });
    }

    fn uniform(&mut self, shape: [usize; 4]) -> Tensor {
        self.rng.uniform(shape, -1.0, 1.0).expect("valid interval")
    }

    /// Uniform values kept at least `gap` away from zero, so kinks are
    /// never straddled by a finite-difference step.
    fn away_from_zero(&mut self, shape: [usize; 4], gap: f64) -> Tensor {
        self.uniform(shape)
            .map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
    }
}

/// Run every gradient check: layers and losses at `1e-4`, full networks at `1e-3`.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut s = Suite {
        rng: RngState::new(seed),
        results: Vec::new(),
    };
    check_conv(&mut s)?;
    check_transposed(&mut s)?;
    check_channelwise(&mut s)?;
    check_linear(&mut s)?;
    check_activations(&mut s)?;
    check_batchnorm(&mut s)?;
    check_maxpool(&mut s)?;
    check_dropout(&mut s)?;
    check_losses(&mut s)?;
    check_networks(&mut s)?;
    Ok(s.results)
}

fn check_conv(s: &mut Suite) -> Result<()> {
    let spec = ConvSpec::square(3, 4, 3, 2, 1)?;
    let x = s.uniform([2, 3, 8, 8]);
    let p = LayerParams::new(
        "conv",
        s.uniform(spec.conv_weight_shape().dims()),
        Some(s.uniform(spec.bias_shape().dims())),
    );
    let proj = s.uniform([2, 4, 4, 4]);
    let g = layers::conv2d_backward(&x, &p, &spec, &proj)?;
    let f = |xx: &Tensor, pp: &LayerParams| layers::conv2d(xx, pp, &spec).unwrap().dot(&proj).unwrap();
    let n = finite_diff_grad(|xx| f(xx, &p), &x, EPS)?;
    s.record("conv2d/input", g.dx.data(), n.data(), LAYER_TOLERANCE);
    let n = finite_diff_grad(
        |w| f(&x, &LayerParams::new("", w.clone(), p.bias.clone())),
        &p.weight,
        EPS,
    )?;
    s.record("conv2d/weight", g.dweight.data(), n.data(), LAYER_TOLERANCE);
    let n = finite_diff_grad(
        |b| f(&x, &LayerParams::new("", p.weight.clone(), Some(b.clone()))),
        p.bias.as_ref().unwrap(),
        EPS,
    )?;
    s.record("conv2d/bias", g.dbias.unwrap().data(), n.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_transposed(s: &mut Suite) -> Result<()> {
    let spec = ConvSpec::square(4, 3, 4, 2, 1)?;
    let x = s.uniform([2, 4, 4, 4]);
    let p = LayerParams::new(
        "deconv",
        s.uniform(spec.transposed_weight_shape().dims()),
        Some(s.uniform(spec.bias_shape().dims())),
    );
    let proj = s.uniform([2, 3, 8, 8]);
    let g = layers::transposed_conv2d_backward(&x, &p, &spec, &proj)?;
    let f = |xx: &Tensor, pp: &LayerParams| {
        layers::transposed_conv2d(xx, pp, &spec)
            .unwrap()
            .dot(&proj)
            .unwrap()
    };
    let n = finite_diff_grad(|xx| f(xx, &p), &x, EPS)?;
    s.record("transposed_conv2d/input", g.dx.data(), n.data(), LAYER_TOLERANCE);
    let n = finite_diff_grad(
        |w| f(&x, &LayerParams::new("", w.clone(), p.bias.clone())),
        &p.weight,
        EPS,
    )?;
    s.record("transposed_conv2d/weight", g.dweight.data(), n.data(), LAYER_TOLERANCE);
    let n = finite_diff_grad(
        |b| f(&x, &LayerParams::new("", p.weight.clone(), Some(b.clone()))),
        p.bias.as_ref().unwrap(),
        EPS,
    )?;
    s.record("transposed_conv2d/bias", g.dbias.unwrap().data(), n.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_channelwise(s: &mut Suite) -> Result<()> {
    let (m, n) = (3, 3);
    let x = s.uniform([2, m, n, n]);
    let p = LayerParams::new(
        "cwfc",
        s.uniform([1, m, n * n, n * n]),
        Some(s.uniform([1, m, n, n])),
    );
    let proj = s.uniform([2, m, n, n]);
    let g = layers::channelwise_fc_backward(&x, &p, &proj)?;
    let f = |xx: &Tensor, pp: &LayerParams| layers::channelwise_fc(xx, pp).unwrap().dot(&proj).unwrap();
    let num = finite_diff_grad(|xx| f(xx, &p), &x, EPS)?;
    s.record("channelwise_fc/input", g.dx.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |w| f(&x, &LayerParams::new("", w.clone(), p.bias.clone())),
        &p.weight,
        EPS,
    )?;
    s.record("channelwise_fc/weight", g.dweight.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |b| f(&x, &LayerParams::new("", p.weight.clone(), Some(b.clone()))),
        p.bias.as_ref().unwrap(),
        EPS,
    )?;
    s.record("channelwise_fc/bias", g.dbias.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_linear(s: &mut Suite) -> Result<()> {
    let x = s.uniform([3, 5, 1, 1]);
    let p = LayerParams::new("fc", s.uniform([1, 1, 4, 5]), Some(s.uniform([1, 4, 1, 1])));
    let proj = s.uniform([3, 4, 1, 1]);
    let g = layers::linear_backward(&x, &p, &proj)?;
    let f = |xx: &Tensor, pp: &LayerParams| layers::linear(xx, pp).unwrap().dot(&proj).unwrap();
    let num = finite_diff_grad(|xx| f(xx, &p), &x, EPS)?;
    s.record("linear/input", g.dx.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |w| f(&x, &LayerParams::new("", w.clone(), p.bias.clone())),
        &p.weight,
        EPS,
    )?;
    s.record("linear/weight", g.dweight.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |b| f(&x, &LayerParams::new("", p.weight.clone(), Some(b.clone()))),
        p.bias.as_ref().unwrap(),
        EPS,
    )?;
    s.record("linear/bias", g.dbias.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_activations(s: &mut Suite) -> Result<()> {
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::leaky(0.2)?),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let x = s.away_from_zero([2, 3, 4, 4], 1e-3);
        let proj = s.uniform([2, 3, 4, 4]);
        let y = layers::activation_forward(&x, kind);
        let g = layers::activation_backward(kind, &x, &y, &proj)?;
        let num = finite_diff_grad(
            |xx| layers::activation_forward(xx, kind).dot(&proj).unwrap(),
            &x,
            EPS,
        )?;
        s.record(&format!("activation/{name}"), g.data(), num.data(), LAYER_TOLERANCE);
    }
    Ok(())
}

fn check_batchnorm(s: &mut Suite) -> Result<()> {
    let x = s.uniform([4, 3, 5, 5]);
    let mut p = LayerParams::batchnorm("bn", 3);
    p.weight = s.uniform([1, 3, 1, 1]);
    p.bias = Some(s.uniform([1, 3, 1, 1]));
    let proj = s.uniform([4, 3, 5, 5]);
    let (_, cache) = layers::batchnorm2d_train(&x, &mut p.clone())?;
    let g = layers::batchnorm2d_backward(&cache, &p, &proj)?;
    let f = |xx: &Tensor, pp: &LayerParams| {
        let mut scratch = pp.clone();
        layers::batchnorm2d_train(xx, &mut scratch)
            .unwrap()
            .0
            .dot(&proj)
            .unwrap()
    };
    let num = finite_diff_grad(|xx| f(xx, &p), &x, EPS)?;
    s.record("batchnorm2d/input", g.dx.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |w| {
            let mut q = p.clone();
            q.weight = w.clone();
            f(&x, &q)
        },
        &p.weight,
        EPS,
    )?;
    s.record("batchnorm2d/scale", g.dgamma.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |b| {
            let mut q = p.clone();
            q.bias = Some(b.clone());
            f(&x, &q)
        },
        p.bias.as_ref().unwrap(),
        EPS,
    )?;
    s.record("batchnorm2d/shift", g.dbeta.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_maxpool(s: &mut Suite) -> Result<()> {
    // distinct values spaced well beyond eps keep every window maximum unique
    let mut vals: Vec<f64> = (0..72).map(|i| i as f64 * 0.01).collect();
    let perm = s.rng.permutation(vals.len());
    vals = perm.iter().map(|&i| vals[i]).collect();
    let x = Tensor::from_vec([1, 2, 6, 6], vals)?;
    let proj = s.uniform([1, 2, 3, 3]);
    let (_, idx) = layers::maxpool2d(&x, 2, 2)?;
    let g = layers::maxpool2d_backward(&idx, x.shape(), &proj)?;
    let num = finite_diff_grad(
        |xx| layers::maxpool2d(xx, 2, 2).unwrap().0.dot(&proj).unwrap(),
        &x,
        EPS,
    )?;
    s.record("maxpool2d/input", g.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_dropout(s: &mut Suite) -> Result<()> {
    let x = s.uniform([2, 3, 4, 4]);
    let proj = s.uniform([2, 3, 4, 4]);
    let rng = s.rng.split(99);
    let (_, mask) = layers::dropout(&x, 0.5, &mut rng.clone(), layers::Mode::Train)?;
    let g = layers::dropout_backward(&mask, &proj)?;
    let num = finite_diff_grad(
        |xx| {
            layers::dropout(xx, 0.5, &mut rng.clone(), layers::Mode::Train)
                .unwrap()
                .0
                .dot(&proj)
                .unwrap()
        },
        &x,
        EPS,
    )?;
    s.record("dropout/input", g.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

fn check_losses(s: &mut Suite) -> Result<()> {
    let pred = s.uniform([1, 3, 8, 8]);
    let target = s.uniform([1, 3, 8, 8]);
    let weights = Tensor::from_vec(
        [1, 1, 8, 8],
        (0..64)
            .map(|i| {
                let (y, x) = (i / 8, i % 8);
                if (2..6).contains(&y) && (2..6).contains(&x) {
                    1.0
                } else if (1..7).contains(&y) && (1..7).contains(&x) {
                    10.0
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    for (name, norm) in [("l2", loss::RecNorm::L2), ("l1", loss::RecNorm::L1)] {
        let rec = loss::reconstruction_loss_with(&pred, &target, &weights, norm)?;
        let num = finite_diff_grad(
            |pp| {
                loss::reconstruction_loss_with(pp, &target, &weights, norm)
                    .unwrap()
                    .value
            },
            &pred,
            EPS,
        )?;
        s.record(
            &format!("loss/reconstruction_{name}"),
            rec.grad.data(),
            num.data(),
            LAYER_TOLERANCE,
        );
    }

    let probs = |s: &mut Suite| s.rng.uniform([4, 1, 1, 1], 0.05, 0.95).unwrap();
    let d_real = probs(s);
    let d_fake = probs(s);
    let d = loss::discriminator_loss(&d_real, &d_fake)?;
    let num = finite_diff_grad(
        |r| loss::discriminator_loss(r, &d_fake).unwrap().value,
        &d_real,
        EPS,
    )?;
    s.record("loss/discriminator_real", d.grad_real.data(), num.data(), LAYER_TOLERANCE);
    let num = finite_diff_grad(
        |f| loss::discriminator_loss(&d_real, f).unwrap().value,
        &d_fake,
        EPS,
    )?;
    s.record("loss/discriminator_fake", d.grad_fake.data(), num.data(), LAYER_TOLERANCE);

    let g = loss::generator_adv_loss(&d_fake)?;
    let num = finite_diff_grad(|f| loss::generator_adv_loss(f).unwrap().value, &d_fake, EPS)?;
    s.record("loss/generator_adversarial", g.grad.data(), num.data(), LAYER_TOLERANCE);
    Ok(())
}

/// Sampled coordinates of a whole network: every input pixel would be
/// needlessly slow, so a fixed random subset of inputs and parameters is
/// checked.
fn check_networks(s: &mut Suite) -> Result<()> {
    let cfg = GeneratorConfig {
        image_size: 32,
        base_channels: 4,
        mask: crate::model::MaskConfig {
            kind: MaskKind::Central,
            patch: 16,
            overlap: 2,
        },
        ..GeneratorConfig::default()
    };
    let mut rng = s.rng.split(7);
    let gen = build_generator(&cfg, &mut rng)?;
    let x = s.uniform([1, 3, 32, 32]).map(|v| 0.5 + 0.5 * v);
    network_check(s, "generator", gen, &x, NETWORK_TOLERANCE)?;

    let mut rng = s.rng.split(8);
    let disc = build_discriminator(&cfg, &mut rng)?;
    // a batch of two keeps batch statistics away from their degenerate limit
    let x = s.uniform([2, 3, 16, 16]).map(|v| 0.5 + 0.5 * v);
    network_check(s, "discriminator", disc, &x, NETWORK_TOLERANCE)?;
    Ok(())
}

fn network_check(
    s: &mut Suite,
    name: &str,
    mut net: crate::model::Network,
    x: &Tensor,
    tol: f64,
) -> Result<()> {
    let mut rng = RngState::new(0);
    let y = net.forward(x, layers::Mode::Train, &mut rng)?;
    let proj = s.uniform(y.shape().dims());
    net.zero_grad();
    let dx = net.backward(&proj)?;

    let samples = 24;
    let coords: Vec<usize> = (0..samples).map(|_| s.rng.gen_range(0, x.numel())).collect();
    let eval = |net: &mut crate::model::Network, xx: &Tensor| {
        net.forward(xx, layers::Mode::Train, &mut RngState::new(0))
            .unwrap()
            .dot(&proj)
            .unwrap()
    };
    let mut probe = net.clone();
    let num = finite_diff_at(|xx| eval(&mut probe, xx), x, EPS, &coords)?;
    let ana: Vec<f64> = coords.iter().map(|&i| dx.data()[i]).collect();
    s.record(&format!("{name}/input"), &ana, &num, tol);

    // parameters: sample a few coordinates from every learned tensor
    let mut ana = Vec::new();
    let mut num = Vec::new();
    let tensor_count = net.learned_tensors().len();
    for t in 0..tensor_count {
        let (len, grad) = {
            let tensors = net.learned_tensors();
            (tensors[t].numel(), tensors[t].grad().map(<[f64]>::to_vec))
        };
        let grad = grad.unwrap_or_else(|| vec![0.0; len]);
        for _ in 0..2 {
            let i = s.rng.gen_range(0, len);
            let mut probe = net.clone();
            let orig = probe.learned_tensors_mut()[t].data()[i];
            probe.learned_tensors_mut()[t].data_mut()[i] = orig + EPS;
            let plus = eval(&mut probe, x);
            probe.learned_tensors_mut()[t].data_mut()[i] = orig - EPS;
            let minus = eval(&mut probe, x);
            num.push((plus - minus) / (2.0 * EPS));
            ana.push(grad[i]);
        }
    }
    s.record(&format!("{name}/parameters"), &ana, &num, tol);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn linear_sum_gradient_is_ones() {
        let x = RngState::new(3).uniform([1, 2, 3, 3], -5.0, 5.0).unwrap();
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        assert!(finite_diff_grad(|_| f64::NAN, &x, 1e-5).is_err());
        assert!(finite_diff_grad(|t| t.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
