// Mel-initialized sinc filter bank: cutoffs, kernels, responses and a
// finite-difference check of the cutoff gradients.
//
//     cargo run --example sinc_filters

use ndarray::Array2;
use prominence::frontend::{filter_table, mel_init, sinc_kernel_grads, sinc_kernels};

pub fn run_example() -> anyhow::Result<()> {
    let sr = 16_000;
    let bank = mel_init(32, sr as f64, 30.0, None, 31, 2)?;
    let freqs: Vec<f64> = (0..=8).map(|i| i as f64 * 1000.0).collect();
    println!("{:>3} {:>8} {:>8}   |H| at 0, 1k, ..., 8k Hz", "#", "f1 Hz", "f2 Hz");
    for row in filter_table(&bank, sr, &freqs).iter().step_by(4) {
        let mags: Vec<String> = row.response.iter().map(|m| format!("{m:.2}")).collect();
        println!("{:>3} {:>8.1} {:>8.1}   {}", row.index, row.f1_hz, row.f2_hz, mags.join(" "));
    }

    let kernels = sinc_kernels(&bank);
    println!("\nkernel matrix {:?}; filter 0 center tap {:.4}", kernels.dim(), kernels[[0, 15]]);

    // d(sum(K * R))/dK = R, so the analytic gradient is sinc_kernel_grads(R).
    let r = Array2::from_shape_fn(kernels.dim(), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
    let loss = |b: &prominence::frontend::SincFilterbankParams| (&sinc_kernels(b) * &r).sum();
    let (d_low, d_band) = sinc_kernel_grads(&bank, r.view());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..bank.num_filters() - 1 {
        for (which, analytic) in [(0, d_low[i]), (1, d_band[i])] {
            let (mut up, mut down) = (bank.clone(), bank.clone());
            if which == 0 {
                up.f_low[i] += h;
                down.f_low[i] -= h;
            } else {
                up.band[i] += h;
                down.band[i] -= h;
            }
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(1e-8));
        }
    }
    println!("worst relative gradient error over filters 0..30: {worst:.2e}");
    anyhow::ensure!(worst < 1e-4);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
