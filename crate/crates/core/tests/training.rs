mod common;

use cenc_core::dataio::{encode_checkpoint, load_checkpoint, synthetic_images, Checkpoint};
use cenc_core::loss::{self, LossValue};
use cenc_core::train::{adam_step, prepare_with_masks, train_loop, AdamState, LoopOptions, FINAL_CHECKPOINT};
use cenc_core::{
    Error, GeneratorConfig, LossMode, MaskConfig, MaskKind, Mode, Network, RngState, Tensor, TrainConfig, Trainer,
};

use common::bits;

fn small(mode: LossMode, kind: MaskKind) -> (GeneratorConfig, TrainConfig, Tensor) {
    let gen_cfg = GeneratorConfig {
        image_size: 32,
        base_channels: 4,
        mask: MaskConfig { kind, ..MaskConfig::central_for(32) },
        ..GeneratorConfig::default()
    };
    let cfg = TrainConfig {
        iterations: 10,
        batch_size: 4,
        seed: 21,
        loss_mode: mode,
        ..TrainConfig::default()
    };
    (gen_cfg, cfg, synthetic_images(4, 32, 21))
}

fn params(net: &Network) -> Vec<Vec<u64>> {
    net.learned_tensors().into_iter().map(bits).collect()
}

fn grads(net: &Network) -> Vec<Vec<f64>> {
    net.learned_tensors()
        .into_iter()
        .map(|t| t.grad().map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect()
}

/// Independent replay of the first step from public building blocks.
/// Returns the generator gradient it expects the trainer to produce.
fn replay_first_step(t0: &Trainer, batch: &Tensor) -> (Vec<Vec<f64>>, Option<Network>) {
    let s = batch.shape();
    let masks = t0.iteration_masks(0, s.n, s.h).unwrap();
    let prep = prepare_with_masks(batch, masks, t0.gen_cfg.mask.kind, &t0.fill).unwrap();
    let mut gen = t0.gen.clone();
    let mut rng = RngState::new(0);
    let pred = gen.forward(&prep.masked, Mode::Train, &mut rng).unwrap();
    let rec = loss::reconstruction_loss(&pred, &prep.target, &prep.weights).unwrap();
    if t0.cfg.loss_mode == LossMode::L2Only {
        gen.backward(&rec.grad).unwrap();
        return (grads(&gen), None);
    }
    assert_eq!(t0.gen_cfg.mask.kind, MaskKind::Central, "replay covers central masks");
    let mut disc = t0.disc.clone();
    let mut adam = AdamState::for_network(&disc);
    let fake = pred.detached();
    let d_real = disc.forward(&prep.target, Mode::Train, &mut rng).unwrap();
    disc.backward(&loss::discriminator_loss(&d_real, &d_real).unwrap().grad_real).unwrap();
    let d_fake = disc.forward(&fake, Mode::Train, &mut rng).unwrap();
    disc.backward(&loss::discriminator_loss(&d_real, &d_fake).unwrap().grad_fake).unwrap();
    adam_step(&mut disc, &mut adam, t0.cfg.lr_discriminator).unwrap();

    disc.zero_grad();
    let d_fake = disc.forward(&fake, Mode::Train, &mut rng).unwrap();
    let adv = loss::generator_adv_loss(&d_fake).unwrap();
    let through = disc.backward(&adv.grad).unwrap();
    let adv_pred = LossValue { value: adv.value, grad: through };
    let joint = loss::joint_loss(&rec, &adv_pred, t0.cfg.lambda_rec, t0.cfg.lambda_adv).unwrap();
    gen.backward(&joint.grad).unwrap();
    (grads(&gen), Some(disc))
}

#[test]
fn l2_only_gradient_is_the_reconstruction_gradient() {
    let (g, c, data) = small(LossMode::L2Only, MaskKind::Central);
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let t0 = t.clone();
    let m = t.train_step(&data).unwrap();
    assert!(m.d_loss.is_none() && m.g_adv.is_none());
    let (expected, _) = replay_first_step(&t0, &data);
    assert_eq!(grads(&t.gen), expected);
    assert_eq!(params(&t.disc), params(&t0.disc), "discriminator moved in l2-only mode");
}

#[test]
fn joint_step_updates_each_network_from_its_own_gradient() {
    let (g, c, data) = small(LossMode::Joint, MaskKind::Central);
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let t0 = t.clone();
    t.train_step(&data).unwrap();
    let (expected, disc) = replay_first_step(&t0, &data);

    // discriminator: exactly one Adam step on its own loss
    assert_eq!(params(&t.disc), params(&disc.unwrap()));
    assert!(grads(&t.disc).iter().flatten().all(|&v| v == 0.0), "stale discriminator gradients");

    // generator: exactly one Adam step on the joint gradient
    assert_eq!(grads(&t.gen), expected);
    let mut gen = t0.gen.clone();
    for (dst, src) in gen.learned_tensors_mut().into_iter().zip(&expected) {
        dst.grad_mut().copy_from_slice(src);
    }
    let mut adam = AdamState::for_network(&gen);
    adam_step(&mut gen, &mut adam, t0.cfg.lr_generator).unwrap();
    assert_eq!(params(&t.gen), params(&gen));
}

#[test]
fn first_adam_step_moves_parameters_by_lr() {
    let (g, c, data) = small(LossMode::L2Only, MaskKind::Central);
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let before: Vec<Tensor> = t.gen.learned_tensors().into_iter().cloned().collect();
    t.train_step(&data).unwrap();
    let lr = t.cfg.lr_generator;
    let mut checked = 0;
    for (old, new) in before.iter().zip(t.gen.learned_tensors()) {
        let g = new.grad().unwrap();
        for ((a, b), &gv) in old.data().iter().zip(new.data()).zip(g) {
            if gv.abs() > 1e-4 {
                // m and v are bias-corrected to g and g^2, so only eps keeps the step below lr
                let expect = lr * gv.abs() / (gv.abs() + 1e-8);
                assert!(((a - b).abs() - expect).abs() <= 1e-9 * lr, "moved {} for gradient {gv}", (a - b).abs());
                assert_eq!((a - b).signum(), gv.signum());
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn doubling_both_weights_doubles_first_gradient() {
    let (g, c, data) = small(LossMode::Joint, MaskKind::Central);
    let mut a = Trainer::new(g.clone(), c.clone(), [0.5; 3]).unwrap();
    let c2 = TrainConfig {
        lambda_rec: 2.0 * c.lambda_rec,
        lambda_adv: 2.0 * c.lambda_adv,
        ..c
    };
    let mut b = Trainer::new(g, c2, [0.5; 3]).unwrap();
    let (pa, pb) = (a.gen.clone(), b.gen.clone());
    a.train_step(&data).unwrap();
    b.train_step(&data).unwrap();
    for (ga, gb) in grads(&a.gen).iter().zip(&grads(&b.gen)) {
        for (x, y) in ga.iter().zip(gb) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300), "{x} vs {y}");
        }
    }
    // Adam normalizes the scale away on the first step, up to eps on tiny gradients
    let delta = |before: &Network, after: &Network| -> Vec<f64> {
        before
            .learned_tensors()
            .iter()
            .zip(after.learned_tensors())
            .flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(u, v)| v - u).collect::<Vec<_>>())
            .collect()
    };
    let (da, db) = (delta(&pa, &a.gen), delta(&pb, &b.gen));
    let dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
    let na: f64 = da.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = db.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(dot / (na * nb) > 1.0 - 1e-4, "cosine {}", dot / (na * nb));
}

#[test]
fn first_joint_step_starts_near_chance() {
    let (g, c, data) = small(LossMode::Joint, MaskKind::RandomRegion);
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let m = t.train_step(&data).unwrap();
    let d = m.d_loss.unwrap();
    let anchor = 2.0 * std::f64::consts::LN_2;
    assert!(m.rec.is_finite() && m.g_adv.unwrap().is_finite());
    assert!((d - anchor).abs() <= 0.5 * anchor, "d_loss {d}");
}

#[test]
fn random_masks_change_every_iteration() {
    for kind in [MaskKind::RandomBlock, MaskKind::RandomRegion] {
        let (g, c, _) = small(LossMode::L2Only, kind);
        let t = Trainer::new(g, c, [0.5; 3]).unwrap();
        let draws: Vec<_> = (0..6).map(|i| t.iteration_masks(i, 1, 32).unwrap().remove(0).mask).collect();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                assert_ne!(draws[i], draws[j], "{kind:?} iterations {i} and {j} share a mask");
            }
        }
        assert_eq!(t.iteration_masks(3, 2, 32).unwrap(), t.iteration_masks(3, 2, 32).unwrap());
    }
    let (g, c, _) = small(LossMode::L2Only, MaskKind::Central);
    let t = Trainer::new(g, c, [0.5; 3]).unwrap();
    assert_eq!(t.iteration_masks(0, 1, 32).unwrap(), t.iteration_masks(5, 1, 32).unwrap());
}

#[test]
fn every_epoch_visits_each_image_once() {
    let (g, mut c, _) = small(LossMode::L2Only, MaskKind::Central);
    c.batch_size = 3;
    let t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let seen: Vec<usize> = (0..14).flat_map(|i| t.batch_indices(i, 7)).collect();
    for epoch in seen.chunks(7) {
        let mut e = epoch.to_vec();
        e.sort_unstable();
        assert_eq!(e, (0..7).collect::<Vec<_>>());
    }
    assert_ne!(seen[..7], seen[7..14], "epochs reuse one order");
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let (g, mut c, data) = small(LossMode::Joint, MaskKind::Central);
    c.iterations = 0;
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(g.clone(), c.clone(), [0.5; 3]).unwrap();
    let history = train_loop(&mut t, &data, LoopOptions { log_path: None, checkpoint_dir: Some(dir.path()) }).unwrap();
    assert!(history.is_empty());
    let saved = load_checkpoint(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    let fresh = Checkpoint::from_trainer(&Trainer::new(g, c, [0.5; 3]).unwrap());
    assert_eq!(encode_checkpoint(&saved).unwrap(), encode_checkpoint(&fresh).unwrap());
}

#[test]
fn l2_moving_average_keeps_falling() {
    let (g, mut c, data) = small(LossMode::L2Only, MaskKind::Central);
    c.iterations = 700;
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let rec: Vec<f64> = train_loop(&mut t, &data, LoopOptions::default())
        .unwrap()
        .iter()
        .map(|m| m.rec)
        .collect();
    let window = 100;
    let avg: Vec<f64> = rec.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let falling = avg.windows(2).filter(|p| p[1] < p[0]).count();
    let frac = falling as f64 / (avg.len() - 1) as f64;
    assert!(frac >= 0.95, "moving average fell in {:.1}% of windows", 100.0 * frac);
}

#[test]
fn non_finite_data_trips_the_divergence_guard() {
    let (g, c, mut data) = small(LossMode::Joint, MaskKind::Central);
    data.data_mut()[0] = f64::NAN;
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    match train_loop(&mut t, &data, LoopOptions::default()) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn empty_dataset_rejected() {
    let (g, c, _) = small(LossMode::L2Only, MaskKind::Central);
    let mut t = Trainer::new(g, c, [0.5; 3]).unwrap();
    let empty = Tensor::zeros([0, 3, 32, 32]);
    assert!(matches!(train_loop(&mut t, &empty, LoopOptions::default()), Err(Error::Dataset(_))));
}
