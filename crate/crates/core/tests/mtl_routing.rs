mod common;

use common::{random_input, random_targets, tiny_spec};
use prominence::layers::Mode;
use prominence::mtl::{build_model, total_loss_grad, ArchitectureVariant, LossScales, Model, ModelInput};
use prominence::params::Grads;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grads_at(model: &Model, input: &ModelInput, alpha: f64) -> Grads {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, cache) = model.forward(input, Mode::Train, &mut rng).unwrap();
    let n = input.num_words();
    let (pt, bt) = (random_targets(n, 3), random_targets(n, 4));
    let bound = p.boundary.as_deref().map(|b| (b, bt.as_slice()));
    let (dp, db) = total_loss_grad(&p.prominence, &pt, bound, alpha, LossScales::default());
    let mut g = model.store.zero_grads();
    model.backward(input, &cache, &dp, db.as_deref(), &mut g);
    g
}

fn norm(g: &Grads, ids: &[prominence::params::ParamId]) -> f64 {
    ids.iter().map(|&id| g.max_abs(id)).fold(0.0, f64::max)
}

#[test]
fn shared_heads_boundary_branch_is_silent_at_alpha_one() {
    let spec = tiny_spec(ArchitectureVariant::SharedCnnHeads);
    let model = build_model(&spec).unwrap();
    let input = random_input(&spec, &[4, 3], 2);
    let g = grads_at(&model, &input, 1.0);
    let head = model.boundary.as_ref().unwrap();
    assert_eq!(norm(&g, &head.param_ids()), 0.0);
    assert!(norm(&g, &model.prominence.param_ids()) > 0.0);
    // At alpha = 0 the prominence head is the silent one.
    let g0 = grads_at(&model, &input, 0.0);
    assert_eq!(norm(&g0, &model.prominence.param_ids()), 0.0);
    assert!(norm(&g0, &head.param_ids()) > 0.0);
}

#[test]
fn conditioning_carries_prominence_gradient_into_boundary_branch() {
    for arch in [ArchitectureVariant::CondA, ArchitectureVariant::CondB, ArchitectureVariant::CondSharedSinc] {
        let spec = tiny_spec(arch);
        let model = build_model(&spec).unwrap();
        let input = random_input(&spec, &[4, 3], 2);
        let g = grads_at(&model, &input, 1.0);
        let head = model.boundary.as_ref().unwrap();
        assert!(norm(&g, &head.param_ids()) > 0.0, "{arch}");
        let fe = &model.frontends[head.frontend];
        assert!(norm(&g, &fe.param_ids()) > 0.0, "{arch}");
    }
}

#[test]
fn frontend_sharing_matches_variant() {
    let fe_count = |a| build_model(&tiny_spec(a)).unwrap().frontends.len();
    assert_eq!(fe_count(ArchitectureVariant::Single), 1);
    assert_eq!(fe_count(ArchitectureVariant::SharedCnnHeads), 1);
    assert_eq!(fe_count(ArchitectureVariant::CondB), 1);
    assert_eq!(fe_count(ArchitectureVariant::CondA), 2);
    assert_eq!(fe_count(ArchitectureVariant::CondSharedSinc), 2);

    let m = build_model(&tiny_spec(ArchitectureVariant::CondSharedSinc)).unwrap();
    let (a, b) = (m.frontends[0].param_ids(), m.frontends[1].param_ids());
    let (sa, sb) = (m.frontends[0].sinc_layer().unwrap(), m.frontends[1].sinc_layer().unwrap());
    assert_eq!((sa.f_low, sa.band), (sb.f_low, sb.band));
    // Everything past the first layer is separate.
    let shared = a.iter().filter(|id| b.contains(id)).count();
    assert_eq!(shared, 2);

    let m = build_model(&tiny_spec(ArchitectureVariant::CondA)).unwrap();
    let (a, b) = (m.frontends[0].param_ids(), m.frontends[1].param_ids());
    assert!(a.iter().all(|id| !b.contains(id)));
}

#[test]
fn score_count_equals_word_count() {
    for arch in ArchitectureVariant::ALL {
        let spec = tiny_spec(arch);
        let model = build_model(&spec).unwrap();
        let input = random_input(&spec, &[5, 1, 3], 7);
        let p = model.predict(&input).unwrap();
        assert_eq!(p.prominence.len(), 9, "{arch}");
        assert_eq!(p.boundary.as_ref().map(Vec::len), arch.has_boundary().then_some(9), "{arch}");
        assert_eq!(p.lengths, vec![5, 1, 3]);
        assert!(p.prominence.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn batching_does_not_leak_between_utterances() {
    // Eval mode: padding and batch composition must not change any score.
    for arch in [ArchitectureVariant::Single, ArchitectureVariant::CondSharedSinc] {
        let spec = tiny_spec(arch);
        let model = build_model(&spec).unwrap();
        let both = random_input(&spec, &[5, 2], 8);
        let first = ModelInput {
            segments: both.segments[..5].to_vec(),
            lengths: vec![5],
            ..ModelInput::default()
        };
        let second = ModelInput {
            segments: both.segments[5..].to_vec(),
            lengths: vec![2],
            ..ModelInput::default()
        };
        let joint = model.predict(&both).unwrap();
        let a = model.predict(&first).unwrap();
        let b = model.predict(&second).unwrap();
        let separate: Vec<f64> = a.prominence.iter().chain(&b.prominence).copied().collect();
        for (x, y) in joint.prominence.iter().zip(&separate) {
            assert!((x - y).abs() < 1e-12, "{arch}: {x} vs {y}");
        }
    }
}

#[test]
fn same_seed_same_model() {
    let spec = tiny_spec(ArchitectureVariant::CondA);
    let a = build_model(&spec).unwrap();
    let b = build_model(&spec).unwrap();
    assert!(a.store.iter().zip(b.store.iter()).all(|((_, x), (_, y))| x.data == y.data));
    let mut other = spec.clone();
    other.init_seed += 1;
    let c = build_model(&other).unwrap();
    assert!(a.store.iter().zip(c.store.iter()).any(|((_, x), (_, y))| x.data != y.data));
}
