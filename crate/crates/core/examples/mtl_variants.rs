// The five architectures: parameter counts, shared tensors, and where the
// prominence loss sends gradient when the boundary loss is switched off.
//
//     cargo run --example mtl_variants

use prominence::layers::Mode;
use prominence::mtl::{build_model, total_loss_grad, ArchitectureVariant, LossScales, ModelInput};
use prominence::presets::{desk_model, DESK_L_MAX};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let words = 6;
    let segments: Vec<Vec<f64>> = (0..words)
        .map(|w| (0..DESK_L_MAX).map(|t| 0.2 * ((w + 2) as f64 * 0.01 * t as f64).sin()).collect())
        .collect();
    let input = ModelInput {
        segments,
        lengths: vec![4, 2],
        ..ModelInput::default()
    };
    let targets: Vec<f64> = (0..words).map(|w| (w % 8) as f64 / 7.0).collect();

    println!("{:<18} {:>9} {:>10} {:>22}", "architecture", "params", "front ends", "boundary |grad| @ a=1");
    for arch in ArchitectureVariant::ALL {
        let model = build_model(&desk_model(arch))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = model.forward(&input, Mode::Train, &mut rng)?;
        let bound = p.boundary.as_deref().map(|b| (b, targets.as_slice()));
        let (dp, db) = total_loss_grad(&p.prominence, &targets, bound, 1.0, LossScales::default());
        let mut grads = model.store.zero_grads();
        model.backward(&input, &cache, &dp, db.as_deref(), &mut grads);
        let bgrad = model.boundary.as_ref().map(|h| {
            h.param_ids().iter().map(|&id| grads.max_abs(id)).fold(0.0, f64::max)
        });
        println!(
            "{:<18} {:>9} {:>10} {:>22}",
            arch.name(),
            model.num_trainable(),
            model.frontends.len(),
            bgrad.map_or("-".into(), |g| format!("{g:.3e}"))
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
