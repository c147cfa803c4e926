//! Mixing-time diagnostics: bounds, scalings, and an empirical check.
//!
//! For log-concave targets, the mixing time of an independence sampler is
//! controlled by how well its proposal tracks the target: a warm-start
//! constant, a strong-concavity parameter, and a Lipschitz constant of the
//! log acceptance weight enter an explicit upper bound. The bound itself
//! is loose (it is a worst-case guarantee), but the *scaling indicators*
//! it produces order the two proposal choices correctly. This example
//! evaluates the bound machinery on a diagonal instance, prints the
//! scaling indicators for both variants across SNR, and confirms the
//! predicted ordering against the measured autocorrelation of short runs.
//!
//! Run with:
//!
//! ```text
//! cargo run --example mixing_diagnostics
//! ```

use latent_imh::analytics::{
    mixing_bound, mixing_scaling_diagonal, r_constant, warm_start_radius, MixingBoundInputs,
};
use latent_imh::problems::{make_diagonal_synthetic, synthetic_data, NoiseLevel};
use latent_imh::samplers::{EngineChoice, ImhChain, ImhVariant, StopRule};
use latent_imh::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Lag-1 autocorrelation of the first coordinate of a chain's samples.
fn lag1_autocorrelation(variant: ImhVariant, snr_log10: f64, seed: u64) -> Result<f64> {
    let (problem, _) =
        make_diagonal_synthetic(100, 20, 0.06, NoiseLevel::SnrLog10(snr_log10), seed)?;
    let y = synthetic_data(&problem, seed ^ 0xbeef)?;
    let mut chain = ImhChain::new(problem, y, variant, EngineChoice::Auto)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x77)
;
    let batch = chain.run(&mut rng, StopRule::Steps(20_000))?;
    let xs: Vec<f64> = batch.samples.iter().map(|x| x[0]).collect();
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let cov = xs
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(cov / var)
}

fn main() -> Result<()> {
    // The bound machinery itself, on explicit constants.
    let inputs = MixingBoundInputs {
        m: 1.0,
        beta: 4.0,
        eps_tv: 0.01,
        lipschitz_c: 0.2,
    };
    println!("radius constant r(0.01, d=100): {:.4}", r_constant(0.01, 100)?);
    println!(
        "warm-start radius (d=100, contraction 0.9, mode shift 0.3): {:.4}",
        warm_start_radius(100, 1.0, 0.01, 4.0, 0.9, 0.3)?
    );
    println!(
        "mixing-time upper bound at C={}: {:.3e} steps",
        inputs.lipschitz_c,
        mixing_bound(&inputs)?
    );
    println!(
        "mixing-time upper bound at C=0 (perfect proposal): {:.3e} steps\n",
        mixing_bound(&MixingBoundInputs {
            lipschitz_c: 0.0,
            ..inputs
        })?
    );

    // Scaling indicators vs SNR on one diagonal family (standard-normal
    // prior posteriors are 1-strongly log-concave in the whitened frame,
    // so m = 1 is the natural choice).
    println!(
        "{:>9} {:>14} {:>14} {:>22}",
        "log10 SNR", "approx scale", "latent scale", "lag-1 autocorrelation"
    );
    for q in [1.0f64, 2.0, 3.0] {
        let (_, spec) = make_diagonal_synthetic(100, 20, 0.06, NoiseLevel::SnrLog10(q), 5)?;
        let (approx_scale, latent_scale) = mixing_scaling_diagonal(&spec, 1.0)?;
        let approx_rho = lag1_autocorrelation(ImhVariant::Approx, q, 5)?;
        let latent_rho = lag1_autocorrelation(ImhVariant::Latent, q, 5)?;
        println!(
            "{q:>9.1} {approx_scale:>14.4e} {latent_scale:>14.4e}    a={approx_rho:>6.3} l={latent_rho:>6.3}"
        );
    }
    println!("\nthe approximate variant's scale indicator explodes with SNR and its");
    println!("chain decorrelates more slowly; the latent variant's stays level.");
    Ok(())
}
