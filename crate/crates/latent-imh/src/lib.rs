//! Latent-space independence Metropolis-Hastings for Bayesian linear
//! inverse problems.
//!
//! # The setting
//!
//! A linear inverse problem observes a hidden field through a noisy linear
//! map: the parameter `x` lifts to a field `u = F x` governed by an
//! expensive solve, and data arrive as `y = O u + e` with Gaussian noise
//! `e`. Sampling the posterior `p(x | y)` is dominated by applications of
//! the exact operator `F`. When a cheap surrogate `Ftilde` (a coarser
//! mesh, a looser solver tolerance, a sketch) is available, it induces an
//! approximate posterior that is easy to sample but biased.
//!
//! # The samplers
//!
//! Independence Metropolis-Hastings corrects the surrogate bias exactly:
//! draw proposals from the approximate posterior and accept or reject with
//! a ratio that references the exact operator. The crate implements two
//! variants that differ in *where* the proposal lives and therefore in
//! *which* exact applications each step costs:
//!
//! - **Approximate-proposal IMH** ([`samplers::ImhVariant::Approx`])
//!   proposes parameters from the approximate posterior and pays one exact
//!   *forward* application per step to evaluate the true likelihood.
//! - **Latent-proposal IMH** ([`samplers::ImhVariant::Latent`]) proposes a
//!   *field* from the approximate field posterior and pays one exact
//!   *inverse* application per step to pull it back to parameter space.
//!   The acceptance ratio then involves only prior densities, and its
//!   quality degrades more slowly as data become informative.
//!
//! Both reduce to ordinary exact sampling when `Ftilde = F`: every
//! proposal is accepted. Baseline samplers (MALA, a no-U-turn sampler, and
//! two-stage delayed acceptance) are included for cost comparisons, all
//! instrumented through the same solve counters.
//!
//! # What the crate provides
//!
//! - [`operators`]: counted linear operators, the square reparameterization
//!   of a rectangular lifting, and dense/matrix-free application.
//! - [`models`]: priors (Gaussian, mixtures, Laplace, smoothed total
//!   variation), the noise model, [`models::InverseProblem`], and
//!   closed-form Gaussian posteriors for all three operator roles.
//! - [`samplers`]: the two IMH variants with pluggable proposal engines,
//!   plus MALA, no-U-turn, and two-stage baselines.
//! - [`analytics`]: closed-form expected divergences of the two surrogate
//!   posteriors from the exact one, Monte-Carlo checks, general-operator
//!   bounds, and spectral-gap mixing diagnostics.
//! - [`problems`]: generators for the three model problems (rotated
//!   diagonal synthetic, graph-Laplacian smoothing with truncated PCG, and
//!   a Helmholtz source problem with a coarse-grid surrogate).
//! - [`metrics`]: relative mean error, squared bias of second moments,
//!   kernel discrepancy (MMD) with a median-heuristic bandwidth, and
//!   error-map utilities, all with deterministic parallel reductions.
//! - [`experiment`]: a config-driven harness that runs sampler suites over
//!   parallel chains against a ground-truth posterior and writes CSVs plus
//!   a reproducible JSON manifest; the `limh` binary exposes it as `run`,
//!   `report-kl`, and `validate`.
//!
//! # Reproducibility
//!
//! Every random quantity derives from explicit seeds; experiment outputs
//! are byte-identical across repeated invocations of the same config, and
//! thread count (set via `RAYON_NUM_THREADS`) never changes results.
//!
//! # Example
//!
//! Draw from a small posterior with the latent-proposal sampler:
//!
//! ```
//! use latent_imh::problems::{make_diagonal_synthetic, synthetic_data, NoiseLevel};
//! use latent_imh::samplers::{EngineChoice, ImhChain, ImhVariant, StopRule};
//! use rand::SeedableRng;
//!
//! let (problem, _spec) =
//!     make_diagonal_synthetic(20, 5, 0.05, NoiseLevel::Sigma(0.1), 7)?;
//! let y = synthetic_data(&problem, 11)?;
//! let mut chain = ImhChain::new(problem, y, ImhVariant::Latent, EngineChoice::Auto)?;
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
//! let batch = chain.run(&mut rng, StopRule::Steps(200))?;
//! assert_eq!(batch.samples.len(), 200);
//! // Latent proposals cost one exact inverse application per step.
//! assert_eq!(batch.inverse_solves, 200);
//! assert_eq!(batch.forward_solves, 0);
//! # Ok::<(), latent_imh::Error>(())
//! ```

pub mod analytics;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod operators;
pub mod pcg;
pub mod problems;
pub mod samplers;

pub use error::{Error, Result};
