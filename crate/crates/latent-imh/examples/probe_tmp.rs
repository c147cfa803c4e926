//! Temporary parameter probe (deleted before release).

use latent_imh::pcg::PcgSettings;
use latent_imh::problems::{make_graph_laplacian_problem, synthetic_data, NoiseLevel};
use latent_imh::samplers::{EngineChoice, ImhChain, ImhVariant, StopRule};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let t0 = std::time::Instant::now();
    let d_y = 20;
    for (seed, q) in [(11, 3.5)] {
        for tol in [5e-4, 1e-2, 5e-2, 1e-1] {
            let (problem, report) = make_graph_laplacian_problem(
                10,
                6,
                100,
                d_y,
                PcgSettings { tolerance: tol, max_iters: 10_000 },
                1e-12,
                NoiseLevel::SnrLog10(q),
                seed,
            )
            .unwrap();
            let y = synthetic_data(&problem, seed + 2).unwrap();
            let mut accs = [0.0f64; 2];
            for (slot, variant) in [ImhVariant::Approx, ImhVariant::Latent].iter().enumerate() {
                for chain_seed in 0..4u64 {
                    let mut chain = ImhChain::new(
                        problem.fork_counters(),
                        y.clone(),
                        *variant,
                        EngineChoice::Auto,
                    )
                    .unwrap();
                    let mut rng = ChaCha20Rng::seed_from_u64(900 + chain_seed);
                    let batch = chain.run(&mut rng, StopRule::Steps(2_000)).unwrap();
                    accs[slot] += batch.acceptance_rate / 4.0;
                }
            }
            println!(
                "seed={seed} q={q:.1} tol={tol:.0e}  iters={:6.2}  spec_err={:.3e}  approx={:.4}  latent={:.4}  ({:?})",
                report.mean_iterations_approx,
                problem.spectral_error().unwrap(),
                accs[0],
                accs[1],
                t0.elapsed()
            );
        }
    }
}
