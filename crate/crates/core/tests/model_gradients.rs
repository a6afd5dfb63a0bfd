mod common;

use common::{random_input, random_targets, tiny_spec};
use prominence::layers::Mode;
use prominence::mtl::{build_model, total_loss, total_loss_grad, ArchitectureVariant, LossScales, Model, ModelInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.7;

fn loss(model: &Model, input: &ModelInput, pt: &[f64], bt: &[f64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, _) = model.forward(input, Mode::Train, &mut rng).unwrap();
    let bound = p.boundary.as_deref().map(|b| (b, bt));
    total_loss(&p.prominence, pt, bound, ALPHA, LossScales { prom: 0.8, bound: 1.3 }).unwrap().total
}

fn check(mut model: Model, input: &ModelInput) {
    // Move the top filter off the Nyquist clamp, where the loss has a kink.
    for fe in model.frontends.clone() {
        if let Some(s) = fe.sinc_layer() {
            model.store.data_mut(s.band).iter_mut().for_each(|b| *b *= 0.97);
        }
    }
    let n = input.num_words();
    let (pt, bt) = (random_targets(n, 1), random_targets(n, 2));
    let scales = LossScales { prom: 0.8, bound: 1.3 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, cache) = model.forward(input, Mode::Train, &mut rng).unwrap();
    let bound = p.boundary.as_deref().map(|b| (b, bt.as_slice()));
    let (dp, db) = total_loss_grad(&p.prominence, &pt, bound, ALPHA, scales);
    let mut grads = model.store.zero_grads();
    model.backward(input, &cache, &dp, db.as_deref(), &mut grads);

    let mut pick = ChaCha8Rng::seed_from_u64(9);
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.data.len(), p.name.clone())).collect();
    let h = 1e-6;
    let mut checked = 0;
    for (id, len, name) in ids {
        for _ in 0..2 {
            let k = pick.random_range(0..len);
            let orig = model.store.data(id)[k];
            model.store.data_mut(id)[k] = orig + h;
            let up = loss(&model, input, &pt, &bt);
            model.store.data_mut(id)[k] = orig - h;
            let down = loss(&model, input, &pt, &bt);
            model.store.data_mut(id)[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.slot(id)[k];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(err < 1e-4, "{name}[{k}]: analytic {analytic:e} numeric {numeric:e}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn every_variant_matches_finite_differences() {
    for arch in ArchitectureVariant::ALL {
        let spec = tiny_spec(arch);
        let model = build_model(&spec).unwrap();
        let input = random_input(&spec, &[3, 2], 3);
        check(model, &input);
    }
}

#[test]
fn fused_inputs_match_finite_differences() {
    let mut spec = tiny_spec(ArchitectureVariant::CondB);
    spec.fusion.use_acoustic_features = true;
    spec.fusion.prominence_feature_dim = 5;
    spec.fusion.boundary_feature_dim = 4;
    spec.fusion.use_lexical = true;
    spec.fusion.lexical.embedding_dim = 6;
    spec.fusion.lexical.projection_dim = 7;
    spec.fusion.lexical.dropout = 0.0;
    let model = build_model(&spec).unwrap();
    let input = random_input(&spec, &[2, 3], 4);
    check(model, &input);
}

#[test]
fn detached_conditioning_blocks_the_boundary_branch() {
    let mut spec = tiny_spec(ArchitectureVariant::CondA);
    spec.detach_conditioning = true;
    spec.loss.alpha = 1.0;
    let model = build_model(&spec).unwrap();
    let input = random_input(&spec, &[3], 6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (p, cache) = model.forward(&input, Mode::Train, &mut rng).unwrap();
    let pt = random_targets(3, 1);
    let (dp, db) = total_loss_grad(&p.prominence, &pt, p.boundary.as_deref().map(|b| (b, pt.as_slice())), 1.0, LossScales::default());
    let mut grads = model.store.zero_grads();
    model.backward(&input, &cache, &dp, db.as_deref(), &mut grads);
    let head = model.boundary.as_ref().unwrap();
    assert!(head.param_ids().iter().all(|&id| grads.max_abs(id) == 0.0));
}
