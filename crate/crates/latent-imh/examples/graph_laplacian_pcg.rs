//! Graph-Laplacian problem: surrogate quality as a solver-tolerance dial.
//!
//! The forward map smooths a latent field through the inverse of a
//! regularized graph Laplacian on a k-nearest-neighbor lattice graph. The
//! exact operator solves that system to near machine precision; the
//! approximate operator reuses the same preconditioned conjugate-gradient
//! solver but stops early at a configurable tolerance. Loosening the
//! tolerance buys fewer iterations per solve and a worse surrogate, which
//! makes this family a clean testbed for how each independence sampler
//! degrades with surrogate quality.
//!
//! Run with:
//!
//! ```text
//! cargo run --example graph_laplacian_pcg
//! ```
//!
//! Two trends to watch in the table. First, the mean iteration count per
//! assembly solve falls monotonically as the tolerance loosens. Second,
//! the latent-space chain holds a higher acceptance rate than the
//! approximate-target chain at every tolerance: correcting with the exact
//! operator in latent coordinates is insulated from the high-SNR data fit
//! that punishes the approximate target for the same surrogate error.

use latent_imh::pcg::PcgSettings;
use latent_imh::problems::{make_graph_laplacian_problem, synthetic_data, NoiseLevel};
use latent_imh::samplers::{EngineChoice, ImhChain, ImhVariant, StopRule};
use latent_imh::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const LATTICE_SIDE: usize = 10;
const NEIGHBORS: usize = 6;
const LATENT_DIM: usize = 100;
const OBSERVATIONS: usize = 20;
const SNR_LOG10: f64 = 3.5;
const CHAINS: u64 = 4;
const STEPS: u64 = 2_000;

fn mean_acceptance(
    problem: &latent_imh::models::InverseProblem,
    y: &nalgebra::DVector<f64>,
    variant: ImhVariant,
) -> Result<f64> {
    let mut total = 0.0;
    for chain_seed in 0..CHAINS {
        let mut chain = ImhChain::new(
            problem.fork_counters(),
            y.clone(),
            variant,
            EngineChoice::Auto,
        )?;
        let mut rng = ChaCha20Rng::seed_from_u64(900 + chain_seed);
        let batch = chain.run(&mut rng, StopRule::Steps(STEPS))?;
        total += batch.acceptance_rate;
    }
    Ok(total / CHAINS as f64)
}

fn main() -> Result<()> {
    println!(
        "lattice {side}^3 ({} nodes), {NEIGHBORS}-NN graph, d_x = {LATENT_DIM}, d_y = {OBSERVATIONS}, log10 SNR = {SNR_LOG10}",
        LATTICE_SIDE.pow(3),
        side = LATTICE_SIDE,
    );
    println!(
        "\n{:>9} {:>11} {:>14} {:>14} {:>14}",
        "tolerance", "mean iters", "spectral err", "approx accept", "latent accept"
    );
    for tolerance in [5e-4, 1e-2, 5e-2, 1e-1] {
        let (problem, report) = make_graph_laplacian_problem(
            LATTICE_SIDE,
            NEIGHBORS,
            LATENT_DIM,
            OBSERVATIONS,
            PcgSettings {
                tolerance,
                max_iters: 10_000,
            },
            1e-12,
            NoiseLevel::SnrLog10(SNR_LOG10),
            11,
        )?;
        let y = synthetic_data(&problem, 13)?;
        let approx = mean_acceptance(&problem, &y, ImhVariant::Approx)?;
        let latent = mean_acceptance(&problem, &y, ImhVariant::Latent)?;
        println!(
            "{:>9.0e} {:>11.2} {:>14.3e} {:>14.4} {:>14.4}",
            tolerance,
            report.mean_iterations_approx,
            problem.spectral_error()?,
            approx,
            latent,
        );
    }
    println!("\niterations shrink with the tolerance while the latent chain");
    println!("keeps the acceptance lead at every point on the dial.");
    Ok(())
}
