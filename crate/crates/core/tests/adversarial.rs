mod common;

use common::{input_store, normal, rng, tiny_train_config, uniform};
use patn::adversarial::{
    full_loss, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, DiscConfig, Discriminators, GanMode, IdentityExtractor,
    LossWeights, RandomConvExtractor,
};
use patn::graph::Mode;
use patn::model::Variant;
use patn::rng::Streams;
use patn::train::{ExtractorKind, Trainer};
use patn::{Graph, Tensor};

fn small_disc() -> DiscConfig {
    DiscConfig { channels: [4, 8], num_res_blocks: 1, ..DiscConfig::default() }
}

#[test]
fn discriminator_scores_are_probabilities() {
    let mut d = Discriminators::<f64>::new(&small_disc(), 3).unwrap();
    let mut r = rng(1);
    let mut g = Graph::new();
    let a = g.constant(normal(&[3, 3, 16, 16], &mut r));
    let b = g.constant(normal(&[3, 3, 16, 16], &mut r));
    let s = g.constant(uniform(&[3, 18, 16, 16], 0.0, 1.0, &mut r));
    let ra = d.appearance_score(&mut g, a, b, false).unwrap();
    let rs = d.shape_score(&mut g, s, b, false).unwrap();
    for v in [ra, rs] {
        assert_eq!(g.shape(v), [3]);
        assert!(g.value(v).data().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    let mut again = Discriminators::<f64>::new(&small_disc(), 3).unwrap();
    let ra2 = again.appearance_score(&mut g, a, b, false).unwrap();
    assert_eq!(g.value(ra), g.value(ra2));

    assert!(d.appearance_score(&mut g, a, s, false).is_err());
    assert!(d.shape_score(&mut g, a, b, false).is_err());
    let small = g.constant(Tensor::zeros(vec![3, 3, 8, 8]));
    assert!(d.appearance_score(&mut g, a, small, false).is_err());
}

#[test]
fn full_loss_is_the_weighted_sum() {
    let w = LossWeights { alpha: 5.0, lambda1: 1.0, lambda2: 0.5 };
    let (store, ids) = input_store(vec![
        Tensor::new(vec![1], vec![0.7]).unwrap(),
        Tensor::new(vec![1], vec![0.3]).unwrap(),
        Tensor::new(vec![1], vec![0.2]).unwrap(),
    ]);
    let mut g = Graph::new();
    let v: Vec<_> = ids.iter().map(|&id| g.param(&store, id)).collect();
    let (gan, l1, per) = (g.sum(v[0]), g.sum(v[1]), g.sum(v[2]));
    let total = full_loss(&mut g, gan, l1, per, &w).unwrap();
    assert!((g.value(total).item() - (5.0 * 0.7 + 0.3 + 0.5 * 0.2)).abs() < 1e-15);
    let grads = g.backward(total).unwrap();
    let mut store = store;
    grads.accumulate_into(&mut store);
    let got: Vec<f64> = store.params().iter().map(|p| p.grad.item()).collect();
    assert_eq!(got, [5.0, 1.0, 0.5]);
}

#[test]
fn primitive_losses_match_their_formulas() {
    let mut r = rng(2);
    let pa = uniform(&[4], 0.05, 0.95, &mut r);
    let pb = uniform(&[4], 0.05, 0.95, &mut r);
    let mut g = Graph::new();
    let (fa, fs) = (g.constant(pa.clone()), g.constant(pb.clone()));
    let (ra, rs) = (g.constant(pb.clone()), g.constant(pa.clone()));
    let mean = |f: &dyn Fn(usize) -> f64| (0..4).map(f).sum::<f64>() / 4.0;
    let (a, b) = (pa.data(), pb.data());

    let ns = gan_loss_g(&mut g, fa, fs, GanMode::NonSaturating).unwrap();
    let want = -mean(&|i| a[i].ln()) - mean(&|i| b[i].ln());
    assert!((g.value(ns).item() - want).abs() < 1e-12);
    let mm = gan_loss_g(&mut g, fa, fs, GanMode::Minimax).unwrap();
    let want = mean(&|i| (1.0 - a[i]).ln()) + mean(&|i| (1.0 - b[i]).ln());
    assert!((g.value(mm).item() - want).abs() < 1e-12);

    let d = gan_loss_d(&mut g, ra, fa, rs, fs).unwrap();
    let want = -mean(&|i| b[i].ln()) - mean(&|i| (1.0 - a[i]).ln()) - mean(&|i| a[i].ln()) - mean(&|i| (1.0 - b[i]).ln());
    assert!((g.value(d).item() - want).abs() < 1e-12);

    // saturated scores stay finite through the log clamp
    let one = g.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
    let zero = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
    let sat = gan_loss_d(&mut g, zero, one, zero, one).unwrap();
    assert!(g.value(sat).item().is_finite());

    let x = normal(&[2, 3, 8, 8], &mut r);
    let y = normal(&[2, 3, 8, 8], &mut r);
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let l1 = l1_loss(&mut g, xv, yv).unwrap();
    let want = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.numel() as f64;
    assert!((g.value(l1).item() - want).abs() < 1e-14);
    let per = perceptual_loss(&mut g, xv, yv, &IdentityExtractor).unwrap();
    assert_eq!(g.value(per), g.value(l1));
    let ext = RandomConvExtractor::<f64>::with_widths(4, &[5, 6]).unwrap();
    let per = perceptual_loss(&mut g, xv, yv, &ext).unwrap();
    assert!(g.value(per).item() > 0.0);
    let same = perceptual_loss(&mut g, xv, xv, &ext).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
}

/// The discriminator phase sees only a detached copy of the fake, so the
/// generator gets nothing from it; the generator phase scores through frozen
/// discriminators, so they get nothing from it.
#[test]
fn phases_do_not_leak_gradients() {
    let mut t = Trainer::<f64>::new(tiny_train_config(Variant::Apatn)).unwrap();
    let b = t.batch(&[0, 1]).unwrap();
    let mut dr = Streams::new(0).stream("dropout", 0);
    let mut g = Graph::new();
    let (pc, pt, sc, st) = (g.constant(b.p_c.clone()), g.constant(b.p_t.clone()), g.constant(b.s_c.clone()), g.constant(b.s_t.clone()));
    let fake = t.gen.forward(&mut g, Mode::Train, &mut dr, false, pc, sc, st).unwrap().image;

    let detached = g.constant(g.value(fake).clone());
    let real_a = t.discs.appearance_score(&mut g, pc, pt, false).unwrap();
    let fake_a = t.discs.appearance_score(&mut g, pc, detached, false).unwrap();
    let real_s = t.discs.shape_score(&mut g, st, pt, false).unwrap();
    let fake_s = t.discs.shape_score(&mut g, st, detached, false).unwrap();
    let ld = gan_loss_d(&mut g, real_a, fake_a, real_s, fake_s).unwrap();
    let grads = g.backward(ld).unwrap();
    t.gen.store.zero_grad();
    grads.accumulate_into(&mut t.gen.store);
    assert!(t.gen.store.params().iter().all(|p| p.grad.data().iter().all(|v| *v == 0.0)));
    t.discs.appearance.store.zero_grad();
    grads.accumulate_into(&mut t.discs.appearance.store);
    assert!(t.discs.appearance.store.params().iter().any(|p| p.grad.data().iter().any(|v| *v != 0.0)));

    let fa = t.discs.appearance_score(&mut g, pc, fake, true).unwrap();
    let fs = t.discs.shape_score(&mut g, st, fake, true).unwrap();
    let lg = gan_loss_g(&mut g, fa, fs, GanMode::NonSaturating).unwrap();
    let grads = g.backward(lg).unwrap();
    for d in [&mut t.discs.appearance, &mut t.discs.shape] {
        d.store.zero_grad();
        grads.accumulate_into(&mut d.store);
        assert!(d.store.params().iter().all(|p| p.grad.data().iter().all(|v| *v == 0.0)));
    }
    t.gen.store.zero_grad();
    grads.accumulate_into(&mut t.gen.store);
    assert!(t.gen.store.params().iter().any(|p| p.grad.data().iter().any(|v| *v != 0.0)));
}

#[test]
fn generator_step_without_adversary_follows_reconstruction() {
    let mut cfg = tiny_train_config(Variant::Patn);
    cfg.weights.alpha = 0.0;
    cfg.extractor = ExtractorKind::Identity;
    let mut t = Trainer::<f64>::new(cfg).unwrap();
    let before = t.gen.clone();
    let discs_before = t.discs.clone();
    let b = t.batch(&[2, 3]).unwrap();
    let report = t.step_on(&b, 2e-4, 0).unwrap();
    assert_eq!(report.g_per, report.g_l1);
    assert_eq!(report.g_total, report.g_l1 + report.g_per);

    // same generator, same dropout stream, reconstruction terms only
    let mut gen = before;
    let mut dr = Streams::new(t.config.seed).stream("dropout", 0);
    let mut g = Graph::new();
    let (pc, pt, sc, st) = (g.constant(b.p_c.clone()), g.constant(b.p_t.clone()), g.constant(b.s_c.clone()), g.constant(b.s_t.clone()));
    let fake = gen.forward(&mut g, Mode::Train, &mut dr, false, pc, sc, st).unwrap().image;
    let l1 = l1_loss(&mut g, fake, pt).unwrap();
    let total = g.add(l1, l1).unwrap();
    assert_eq!(g.value(l1).item(), report.g_l1);
    let grads = g.backward(total).unwrap();
    gen.store.zero_grad();
    grads.accumulate_into(&mut gen.store);
    for (p, q) in gen.store.params().iter().zip(t.gen.store.params()) {
        let diff = p.grad.data().iter().zip(q.grad.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{}: {diff}", p.name);
    }

    // the discriminators trained on this step even though alpha is zero
    let moved = |a: &patn::ParamStore<f64>, b: &patn::ParamStore<f64>| {
        a.params().iter().zip(b.params()).any(|(p, q)| p.value != q.value)
    };
    assert!(moved(&discs_before.appearance.store, &t.discs.appearance.store));
    assert!(moved(&discs_before.shape.store, &t.discs.shape.store));
}
