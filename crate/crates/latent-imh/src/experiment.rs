//! Experiment harness: configs, seeding, ground truth, runs, and reports.
//!
//! An [`ExperimentConfig`] names a problem family with its parameters, a
//! list of samplers, a stopping rule (step count or exact-solve budget), a
//! checkpoint schedule, a chain count, and a master seed. [`run_experiment`]
//! builds the problem, draws synthetic data, runs every sampler over
//! parallel chains, reduces each chain to a [`MetricSeries`] against the
//! ground-truth posterior, and writes per-chain CSVs, cross-chain averages,
//! and a JSON manifest. [`report_kl`] evaluates the closed-form divergence
//! diagnostics for Gaussian-prior problems without running any chains.
//!
//! Everything depends only on the config and the master seed: per-chain
//! generators are derived with a documented hash-based splitting rule, so a
//! repeated invocation reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    expected_kl_closed_form, expected_kl_prior_reference, kl_general_bounds, BoundReport,
    DiagonalSpec, KlReport,
};
use crate::error::{Error, Result};
use crate::metrics::{
    median_heuristic, mmd2, relative_mean_error, squared_bias_second_moment, MetricSeries,
};
use crate::models::{gaussian_posterior, InverseProblem, OperatorChoice, PosteriorVariant};
use crate::pcg::PcgSettings;
use crate::problems::{
    make_diagonal_synthetic, make_graph_laplacian_problem, make_helmholtz_problem, synthetic_data,
    GraphAssemblyReport, HelmholtzGrid, NoiseLevel,
};
use crate::samplers::{
    EngineChoice, ImhChain, ImhVariant, MalaChain, MalaOptions, NutsChain, NutsOptions,
    PosteriorTarget, SampleBatch, StopRule, TwoStageChain, TwoStageOptions,
};

/// Config schema version this build reads and writes.
pub const CONFIG_SCHEMA: u32 = 1;

/// Most points used on either side of an MMD evaluation; longer prefixes
/// are thinned with an even stride so checkpoints stay affordable.
pub const MMD_POINT_CAP: usize = 500;

/// Ground-truth reference sample count (MMD comparison set).
pub const REFERENCE_SAMPLE_COUNT: usize = 1000;

fn default_pcg_max_iters() -> usize {
    10_000
}

fn default_exact_tolerance() -> f64 {
    1e-12
}

fn default_warmup() -> u64 {
    1_000
}

fn default_step() -> f64 {
    0.5
}

/// Problem family plus generator parameters, as a tagged JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemConfig {
    DiagonalSynthetic {
        d: usize,
        d_y: usize,
        spectral_error_target: f64,
        noise: NoiseLevel,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
    GraphLaplacian {
        lattice_side: usize,
        k_neighbors: usize,
        d_x: usize,
        d_y: usize,
        pcg_tolerance: f64,
        #[serde(default = "default_pcg_max_iters")]
        pcg_max_iters: usize,
        #[serde(default = "default_exact_tolerance")]
        exact_tolerance: f64,
        noise: NoiseLevel,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
    Helmholtz {
        fine_side: usize,
        coarse_side: usize,
        source_side: usize,
        wavenumber: f64,
        events: usize,
        tv_strength: f64,
        tv_smoothing: f64,
        noise: NoiseLevel,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
}

/// A generated problem together with family-specific extras.
#[derive(Debug)]
pub struct BuiltProblem {
    pub problem: InverseProblem,
    /// Exact diagonal summary, for the diagonal-synthetic family.
    pub diagonal: Option<DiagonalSpec>,
    /// Solver statistics, for the graph-Laplacian family.
    pub graph: Option<GraphAssemblyReport>,
}

impl ProblemConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ProblemConfig::DiagonalSynthetic { .. } => "diagonal-synthetic",
            ProblemConfig::GraphLaplacian { .. } => "graph-laplacian",
            ProblemConfig::Helmholtz { .. } => "helmholtz",
        }
    }

    /// Builds the problem; `fallback_seed` is used when no explicit
    /// `problem_seed` is configured.
    pub fn build(&self, fallback_seed: u64) -> Result<BuiltProblem> {
        match *self {
            ProblemConfig::DiagonalSynthetic {
                d,
                d_y,
                spectral_error_target,
                noise,
                problem_seed,
            } => {
                let (problem, spec) = make_diagonal_synthetic(
                    d,
                    d_y,
                    spectral_error_target,
                    noise,
                    problem_seed.unwrap_or(fallback_seed),
                )?;
                Ok(BuiltProblem {
                    problem,
                    diagonal: Some(spec),
                    graph: None,
                })
            }
            ProblemConfig::GraphLaplacian {
                lattice_side,
                k_neighbors,
                d_x,
                d_y,
                pcg_tolerance,
                pcg_max_iters,
                exact_tolerance,
                noise,
                problem_seed,
            } => {
                let (problem, report) = make_graph_laplacian_problem(
                    lattice_side,
                    k_neighbors,
                    d_x,
                    d_y,
                    PcgSettings {
                        tolerance: pcg_tolerance,
                        max_iters: pcg_max_iters,
                    },
                    exact_tolerance,
                    noise,
                    problem_seed.unwrap_or(fallback_seed),
                )?;
                Ok(BuiltProblem {
                    problem,
                    diagonal: None,
                    graph: Some(report),
                })
            }
            ProblemConfig::Helmholtz {
                fine_side,
                coarse_side,
                source_side,
                wavenumber,
                events,
                tv_strength,
                tv_smoothing,
                noise,
                problem_seed,
            } => {
                let problem = make_helmholtz_problem(
                    HelmholtzGrid {
                        fine_side,
                        coarse_side,
                        source_side,
                        wavenumber,
                        events,
                    },
                    (tv_strength, tv_smoothing),
                    noise,
                    problem_seed.unwrap_or(fallback_seed),
                )?;
                Ok(BuiltProblem {
                    problem,
                    diagonal: None,
                    graph: None,
                })
            }
        }
    }
}

/// One sampler to run, as a tagged JSON object with per-sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SamplerConfig {
    ApproxImh {
        #[serde(default)]
        engine: Option<EngineChoice>,
    },
    LatentImh {
        #[serde(default)]
        engine: Option<EngineChoice>,
    },
    Mala {
        #[serde(default = "default_step")]
        initial_step: f64,
        #[serde(default = "default_warmup")]
        warmup: u64,
    },
    Nuts {
        #[serde(default = "default_warmup")]
        warmup: u64,
    },
    TwoStage {
        #[serde(default = "default_step")]
        initial_step: f64,
        #[serde(default = "default_warmup")]
        warmup: u64,
    },
}

impl SamplerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerConfig::ApproxImh { .. } => "approx-imh",
            SamplerConfig::LatentImh { .. } => "latent-imh",
            SamplerConfig::Mala { .. } => "mala",
            SamplerConfig::Nuts { .. } => "nuts",
            SamplerConfig::TwoStage { .. } => "two-stage",
        }
    }

    /// Adaptation steps run and discarded before recording starts.
    pub fn warmup_steps(&self) -> u64 {
        match *self {
            SamplerConfig::ApproxImh { .. } | SamplerConfig::LatentImh { .. } => 0,
            SamplerConfig::Mala { warmup, .. }
            | SamplerConfig::Nuts { warmup }
            | SamplerConfig::TwoStage { warmup, .. } => warmup,
        }
    }
}

/// A full experiment: problem, samplers, stopping rule, checkpoints,
/// chains, master seed, output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Config schema version; this build understands [`CONFIG_SCHEMA`].
    pub schema: u32,
    pub problem: ProblemConfig,
    pub samplers: Vec<SamplerConfig>,
    /// Recorded steps per chain. Exactly one of `n_steps` and
    /// `solve_budget` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<u64>,
    /// Exact-solve budget per chain (forward plus inverse).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_budget: Option<u64>,
    /// Step indices (strictly increasing, first one at least 2) at which
    /// metrics are evaluated.
    pub checkpoints: Vec<u64>,
    pub n_chains: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if self.schema != CONFIG_SCHEMA {
            return fail(
                "schema",
                format!("unsupported version {}; this build reads {CONFIG_SCHEMA}", self.schema),
            );
        }
        if self.samplers.is_empty() {
            return fail("samplers", "at least one sampler is required".into());
        }
        let mut names: Vec<&str> = self.samplers.iter().map(|s| s.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail(
                "samplers",
                "sampler names must be unique (outputs are named by sampler)".into(),
            );
        }
        match (self.n_steps, self.solve_budget) {
            (Some(_), Some(_)) => {
                return fail(
                    "n_steps",
                    "set exactly one of n_steps and solve_budget, not both".into(),
                )
            }
            (None, None) => {
                return fail("n_steps", "set exactly one of n_steps and solve_budget".into())
            }
            (Some(0), None) => return fail("n_steps", "must be positive".into()),
            (None, Some(0)) => return fail("solve_budget", "must be positive".into()),
            _ => {}
        }
        if self.checkpoints.is_empty() {
            return fail("checkpoints", "at least one checkpoint is required".into());
        }
        if self.checkpoints[0] < 2 {
            return fail(
                "checkpoints",
                "the first checkpoint must be at least 2 (variance-style metrics)".into(),
            );
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return fail("checkpoints", "must increase strictly".into());
        }
        if let Some(n) = self.n_steps {
            let last = *self.checkpoints.last().expect("non-empty");
            if last > n {
                return fail(
                    "checkpoints",
                    format!("last checkpoint {last} exceeds n_steps {n}"),
                );
            }
        }
        if self.n_chains == 0 {
            return fail("n_chains", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_path(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-chain seed: FNV-1a over (master seed, chain index, sampler name),
/// diffused once with a splitmix round. Documented so runs can be
/// reproduced piecemeal.
pub fn chain_seed(master: u64, chain_index: u32, sampler_name: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, &chain_index.to_le_bytes());
    h = fnv1a(h, sampler_name.as_bytes());
    splitmix64(h)
}

/// Auxiliary stream seed (data draw, ground truth, bandwidth) derived from
/// the master seed and a role label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, label.as_bytes());
    splitmix64(h)
}

/// FNV-1a hash of the canonical JSON serialization of the config, as a
/// fixed-width hex string. The manifest stores it and sample-dump sidecars
/// repeat it, so outputs can be matched to the config that produced them.
/// The output directory is excluded: the hash identifies the experiment,
/// not where its files land.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut logical = config.clone();
    logical.output_dir = PathBuf::new();
    let canonical = serde_json::to_string(&logical)?;
    Ok(format!("{:016x}", fnv1a(FNV_OFFSET, canonical.as_bytes())))
}

/// Ground-truth posterior summary used by the metrics.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub mean: DVector<f64>,
    /// Per-coordinate true second moments `E[x_j^2]`.
    pub second_moment: DVector<f64>,
    pub variance: DVector<f64>,
    /// Reference posterior samples for the MMD comparison set.
    pub reference: Vec<DVector<f64>>,
    /// RBF bandwidth from the median heuristic over `reference`.
    pub gamma: f64,
    /// How the truth was obtained: "closed-form" or "reference-run".
    pub kind: &'static str,
}

/// Ground truth for the exact posterior of `problem` given `y`.
///
/// Gaussian-prior problems use the closed-form posterior for moments and
/// draw the MMD reference set from it. Other priors run a seeded
/// no-U-turn reference chain on the exact posterior; with `cache_dir` set,
/// the reference draws are cached to disk and reused.
pub fn ground_truth(
    problem: &InverseProblem,
    y: &DVector<f64>,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<GroundTruth> {
    match gaussian_posterior(problem, y, PosteriorVariant::Exact) {
        Ok(posterior) => {
            let d = problem.dim();
            let chol = nalgebra::linalg::Cholesky::new(posterior.covariance.clone()).ok_or_else(
                || Error::Singular {
                    detail: "exact posterior covariance is not positive definite".into(),
                },
            )?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let reference: Vec<DVector<f64>> = (0..REFERENCE_SAMPLE_COUNT)
                .map(|_| {
                    let z = DVector::from_fn(d, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    &posterior.mean + chol.l() * z
                })
                .collect();
            let gamma = median_heuristic(&reference, splitmix64(seed))?;
            let variance = posterior.covariance.diagonal();
            let second_moment = DVector::from_fn(d, |j, _| {
                variance[j] + posterior.mean[j] * posterior.mean[j]
            });
            Ok(GroundTruth {
                mean: posterior.mean,
                second_moment,
                variance,
                reference,
                gamma,
                kind: "closed-form",
            })
        }
        Err(Error::UnsupportedPrior { .. }) => reference_run_truth(problem, y, seed, cache_dir),
        Err(other) => Err(other),
    }
}

fn truth_cache_key(problem: &InverseProblem, y: &DVector<f64>, seed: u64) -> String {
    let mut h = fnv1a(FNV_OFFSET, problem.metadata().family.as_bytes());
    h = fnv1a(h, &(problem.dim() as u64).to_le_bytes());
    h = fnv1a(h, &seed.to_le_bytes());
    for v in y.iter() {
        h = fnv1a(h, &v.to_le_bytes());
    }
    format!("{h:016x}")
}

fn write_truth_cache(path: &Path, reference: &[DVector<f64>]) -> Result<()> {
    let d = reference[0].len();
    let mut bytes = Vec::with_capacity(16 + reference.len() * d * 8);
    bytes.extend_from_slice(&(reference.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(d as u64).to_le_bytes());
    for x in reference {
        for v in x.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_truth_cache(path: &Path) -> Result<Vec<DVector<f64>>> {
    let bytes = fs::read(path)?;
    let word = |i: usize| -> u64 {
        u64::from_le_bytes(bytes[8 * i..8 * (i + 1)].try_into().expect("8 bytes"))
    };
    if bytes.len() < 16 {
        return Err(Error::InvalidArgument {
            context: "ground_truth",
            reason: "truth cache file is too short".into(),
        });
    }
    let (n, d) = (word(0) as usize, word(1) as usize);
    if bytes.len() != 16 + n * d * 8 {
        return Err(Error::InvalidArgument {
            context: "ground_truth",
            reason: "truth cache length does not match its header".into(),
        });
    }
    Ok((0..n)
        .map(|i| {
            DVector::from_fn(d, |j, _| {
                let off = 16 + 8 * (i * d + j);
                f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"))
            })
        })
        .collect())
}

fn reference_run_truth(
    problem: &InverseProblem,
    y: &DVector<f64>,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<GroundTruth> {
    let cache_path =
        cache_dir.map(|dir| dir.join(format!("truth-{}.bin", truth_cache_key(problem, y, seed))));
    let reference = match &cache_path {
        Some(path) if path.exists() => read_truth_cache(path)?,
        _ => {
            // Seeded no-U-turn reference chain on the exact posterior,
            // isolated from the caller's solve counters.
            let isolated = problem.fork_counters();
            let d = isolated.dim();
            let target = PosteriorTarget::new(isolated, y.clone(), OperatorChoice::Exact);
            let mut chain =
                NutsChain::new(target, DVector::zeros(d), 500, NutsOptions::default())?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            chain.run(&mut rng, StopRule::Steps(500))?;
            let thin = 4u64;
            let batch = chain.run(&mut rng, StopRule::Steps(REFERENCE_SAMPLE_COUNT as u64 * thin))?;
            let reference: Vec<DVector<f64>> = batch
                .samples
                .into_iter()
                .step_by(thin as usize)
                .collect();
            if let Some(path) = &cache_path {
                write_truth_cache(path, &reference)?;
            }
            reference
        }
    };
    let d = reference[0].len();
    let t = reference.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in &reference {
        mean += x;
    }
    mean /= t;
    let mut second = DVector::zeros(d);
    for x in &reference {
        second += x.component_mul(x);
    }
    second /= t;
    let variance = DVector::from_fn(d, |j, _| second[j] - mean[j] * mean[j]);
    let gamma = median_heuristic(&reference, splitmix64(seed))?;
    Ok(GroundTruth {
        mean,
        second_moment: second,
        variance,
        reference,
        gamma,
        kind: "reference-run",
    })
}

enum AnyChain {
    Imh(Box<ImhChain>),
    Mala(Box<MalaChain<PosteriorTarget>>),
    Nuts(Box<NutsChain<PosteriorTarget>>),
    TwoStage(Box<TwoStageChain>),
}

impl AnyChain {
    fn run(&mut self, rng: &mut ChaCha20Rng, stop: StopRule) -> Result<SampleBatch> {
        match self {
            AnyChain::Imh(c) => c.run(rng, stop),
            AnyChain::Mala(c) => c.run(rng, stop),
            AnyChain::Nuts(c) => c.run(rng, stop),
            AnyChain::TwoStage(c) => c.run(rng, stop),
        }
    }

    /// Acceptance mass a batch contributes: accepted transitions, except
    /// for the trajectory sampler where the mean acceptance statistic is
    /// the meaningful rate.
    fn acceptance_mass(&self, batch: &SampleBatch) -> f64 {
        match self {
            AnyChain::Nuts(_) => batch.acceptance_rate * batch.steps as f64,
            _ => batch.accepted as f64,
        }
    }
}

fn build_chain(
    config: &SamplerConfig,
    problem: InverseProblem,
    y: &DVector<f64>,
) -> Result<AnyChain> {
    let d = problem.dim();
    Ok(match *config {
        SamplerConfig::ApproxImh { engine } => AnyChain::Imh(Box::new(ImhChain::new(
            problem,
            y.clone(),
            ImhVariant::Approx,
            engine.unwrap_or(EngineChoice::Auto),
        )?)),
        SamplerConfig::LatentImh { engine } => AnyChain::Imh(Box::new(ImhChain::new(
            problem,
            y.clone(),
            ImhVariant::Latent,
            engine.unwrap_or(EngineChoice::Auto),
        )?)),
        SamplerConfig::Mala {
            initial_step,
            warmup,
        } => {
            let target = PosteriorTarget::new(problem, y.clone(), OperatorChoice::Exact);
            AnyChain::Mala(Box::new(MalaChain::new(
                target,
                DVector::zeros(d),
                warmup as usize,
                MalaOptions {
                    initial_step,
                    ..MalaOptions::default()
                },
            )?))
        }
        SamplerConfig::Nuts { warmup } => {
            let target = PosteriorTarget::new(problem, y.clone(), OperatorChoice::Exact);
            AnyChain::Nuts(Box::new(NutsChain::new(
                target,
                DVector::zeros(d),
                warmup as usize,
                NutsOptions::default(),
            )?))
        }
        SamplerConfig::TwoStage {
            initial_step,
            warmup,
        } => AnyChain::TwoStage(Box::new(TwoStageChain::new(
            problem,
            y.clone(),
            DVector::zeros(d),
            warmup as usize,
            TwoStageOptions {
                initial_step,
                ..TwoStageOptions::default()
            },
        )?)),
    })
}

/// Every recorded position of one chain plus its reduced series.
#[derive(Debug)]
struct ChainRun {
    series: MetricSeries,
    samples: Vec<DVector<f64>>,
    steps: u64,
    acceptance_rate: f64,
    forward_solves: u64,
    inverse_solves: u64,
    truncated: bool,
    mean_fallback: bool,
    skipped_bias_coordinates: usize,
    seed: u64,
}

fn strided_subset(samples: &[DVector<f64>], cap: usize) -> Vec<DVector<f64>> {
    if samples.len() <= cap {
        return samples.to_vec();
    }
    let stride = samples.len().div_ceil(cap);
    samples.iter().step_by(stride).cloned().collect()
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    template: &InverseProblem,
    y: &DVector<f64>,
    sampler: &SamplerConfig,
    n_steps: Option<u64>,
    solve_budget: Option<u64>,
    checkpoints: &[u64],
    truth: &GroundTruth,
    seed: u64,
) -> Result<ChainRun> {
    let handle = template.fork_counters();
    let mut chain = build_chain(sampler, handle.share(), y)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let warmup = sampler.warmup_steps();
    if warmup > 0 {
        chain.run(&mut rng, StopRule::Steps(warmup))?;
    }

    let mut samples: Vec<DVector<f64>> = Vec::new();
    let mut steps = 0u64;
    let mut acceptance_mass = 0.0f64;
    let mut truncated = false;
    let mut series = MetricSeries::default();
    let mut mean_fallback = false;
    let mut skipped = 0usize;

    let reference_cap = truth.reference.len().min(MMD_POINT_CAP);
    let reference_side = &truth.reference[..reference_cap];

    for &cp in checkpoints {
        let want = cp - steps;
        match solve_budget {
            None => {
                let batch = chain.run(&mut rng, StopRule::Steps(want))?;
                acceptance_mass += chain.acceptance_mass(&batch);
                steps += batch.steps;
                samples.extend(batch.samples);
            }
            Some(budget) => {
                for _ in 0..want {
                    let (f, i) = handle.counter_snapshot();
                    if f + i >= budget {
                        truncated = true;
                        break;
                    }
                    let batch = chain.run(&mut rng, StopRule::Steps(1))?;
                    acceptance_mass += chain.acceptance_mass(&batch);
                    steps += batch.steps;
                    samples.extend(batch.samples);
                }
            }
        }
        if steps < cp {
            truncated = true;
            break;
        }
        let (forward, inverse) = handle.counter_snapshot();
        let prefix = &samples[..steps as usize];
        let mean_err = relative_mean_error(prefix, &truth.mean)?;
        mean_fallback |= mean_err.absolute_fallback;
        let bias = squared_bias_second_moment(prefix, &truth.second_moment)?;
        skipped = skipped.max(bias.skipped_coordinates);
        let chain_side = strided_subset(prefix, MMD_POINT_CAP);
        let discrepancy = mmd2(&chain_side, reference_side, truth.gamma)?;
        series.checkpoints.push(cp);
        series.cost_forward.push(forward);
        series.cost_inverse.push(inverse);
        series.acceptance_rate.push(acceptance_mass / steps as f64);
        series.rel_mean_err.push(mean_err.value);
        series.sq_bias_2nd.push(bias.value);
        series.mmd.push(discrepancy);
    }

    // Steps requested beyond the final checkpoint still run (they are part
    // of the configured chain length), they just add no metric row.
    if !truncated {
        if let Some(n) = n_steps {
            if steps < n {
                let batch = chain.run(&mut rng, StopRule::Steps(n - steps))?;
                acceptance_mass += chain.acceptance_mass(&batch);
                steps += batch.steps;
                samples.extend(batch.samples);
            }
        }
    }

    series.validate()?;
    let (forward_solves, inverse_solves) = handle.counter_snapshot();
    Ok(ChainRun {
        series,
        samples,
        steps,
        acceptance_rate: if steps > 0 {
            acceptance_mass / steps as f64
        } else {
            0.0
        },
        forward_solves,
        inverse_solves,
        truncated,
        mean_fallback,
        skipped_bias_coordinates: skipped,
        seed,
    })
}

const CSV_HEADER: &str =
    "step,forward_solves,inverse_solves,acceptance_rate,rel_mean_err,sq_bias_2nd,mmd\n";

fn write_series_csv(path: &Path, series: &MetricSeries) -> Result<()> {
    use std::fmt::Write;
    let mut out = String::from(CSV_HEADER);
    for i in 0..series.len() {
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            series.checkpoints[i],
            series.cost_forward[i],
            series.cost_inverse[i],
            series.acceptance_rate[i],
            series.rel_mean_err[i],
            series.sq_bias_2nd[i],
            series.mmd[i]
        )
        .expect("write to string");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the cross-chain average, column by column, over the checkpoints
/// every chain reached. Summation follows the fixed chain order, so the
/// averaged file is reproducible.
fn write_mean_csv(path: &Path, chains: &[&MetricSeries]) -> Result<MetricSeries> {
    use std::fmt::Write;
    let rows = chains.iter().map(|s| s.len()).min().unwrap_or(0);
    let n = chains.len() as f64;
    let mut out = String::from(CSV_HEADER);
    let mut averaged = MetricSeries::default();
    for i in 0..rows {
        let mean_of = |pick: &dyn Fn(&MetricSeries) -> f64| {
            chains.iter().map(|s| pick(s)).sum::<f64>() / n
        };
        let step = chains[0].checkpoints[i];
        let forward = mean_of(&|s: &MetricSeries| s.cost_forward[i] as f64);
        let inverse = mean_of(&|s: &MetricSeries| s.cost_inverse[i] as f64);
        let acceptance = mean_of(&|s: &MetricSeries| s.acceptance_rate[i]);
        let rel = mean_of(&|s: &MetricSeries| s.rel_mean_err[i]);
        let bias = mean_of(&|s: &MetricSeries| s.sq_bias_2nd[i]);
        let discrepancy = mean_of(&|s: &MetricSeries| s.mmd[i]);
        writeln!(
            out,
            "{step},{forward:.16e},{inverse:.16e},{acceptance:.16e},{rel:.16e},{bias:.16e},{discrepancy:.16e}"
        )
        .expect("write to string");
        averaged.checkpoints.push(step);
        averaged.cost_forward.push(forward.round() as u64);
        averaged.cost_inverse.push(inverse.round() as u64);
        averaged.acceptance_rate.push(acceptance);
        averaged.rel_mean_err.push(rel);
        averaged.sq_bias_2nd.push(bias);
        averaged.mmd.push(discrepancy);
    }
    fs::write(path, out)?;
    Ok(averaged)
}

fn dump_chain_samples(
    base: &Path,
    samples: &[DVector<f64>],
    seed: u64,
    hash: &str,
) -> Result<()> {
    let d = samples.first().map_or(0, |x| x.len());
    let mut bytes = Vec::with_capacity(samples.len() * d * 8);
    for x in samples {
        for v in x.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(base.with_extension("bin"), bytes)?;
    let sidecar = serde_json::json!({
        "shape": [samples.len(), d],
        "dtype": "f64le",
        "order": "row-major",
        "seed": seed,
        "config_hash": hash,
    });
    fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Problem description recorded in manifests and reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestProblem {
    pub family: String,
    pub dim: usize,
    pub obs_dim: usize,
    pub sigma: f64,
    /// Measured `|| I - Ftilde^{-1} F ||_2` of the built operator pair.
    pub spectral_error: Option<f64>,
    pub snr_log10: Option<f64>,
    pub assembly_mean_pcg_iterations: Option<f64>,
}

impl ManifestProblem {
    fn from_problem(problem: &InverseProblem) -> Self {
        let meta = problem.metadata();
        ManifestProblem {
            family: meta.family.clone(),
            dim: problem.dim(),
            obs_dim: problem.obs_dim(),
            sigma: problem.noise().sigma(),
            spectral_error: meta.spectral_error,
            snr_log10: meta.snr_log10,
            assembly_mean_pcg_iterations: meta.assembly_mean_pcg_iterations,
        }
    }
}

/// Closed-form divergence section for Gaussian-prior problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlSection {
    /// Expected divergences of the two surrogate posteriors.
    pub expected: KlReport,
    /// Expected divergence from the prior to the exact posterior.
    pub prior_reference: f64,
    /// `expected.approx / prior_reference`.
    pub ratio_approx: f64,
    /// `expected.latent / prior_reference`.
    pub ratio_latent: f64,
}

fn kl_section(problem: &InverseProblem) -> Result<KlSection> {
    let expected = expected_kl_closed_form(problem)?;
    let prior_reference = expected_kl_prior_reference(problem)?;
    Ok(KlSection {
        ratio_approx: expected.approx / prior_reference,
        ratio_latent: expected.latent / prior_reference,
        expected,
        prior_reference,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestChain {
    pub chain_index: u32,
    pub seed: u64,
    pub steps: u64,
    pub acceptance_rate: f64,
    pub forward_solves: u64,
    pub inverse_solves: u64,
    pub truncated: bool,
    /// The ground-truth mean had zero norm, so rel_mean_err is absolute.
    pub mean_fallback: bool,
    /// Coordinates skipped by the squared-bias metric (zero true moment).
    pub skipped_bias_coordinates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSampler {
    pub name: String,
    pub mean_acceptance_rate: f64,
    pub chains: Vec<ManifestChain>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthInfo {
    pub kind: String,
    pub reference_count: usize,
    pub gamma: f64,
}

/// Everything a run writes besides the CSVs, serialized as JSON.
///
/// Deliberately timestamp-free: two invocations with the same config and
/// seed produce byte-identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub data_seed: u64,
    pub problem: ManifestProblem,
    pub ground_truth: GroundTruthInfo,
    pub kl: Option<KlSection>,
    pub bounds: Option<BoundReport>,
    /// Why `bounds` is absent, when it is.
    pub bounds_note: Option<String>,
    pub samplers: Vec<ManifestSampler>,
    /// True when any chain hit the solve budget before its last checkpoint.
    pub truncated: bool,
    pub csv_files: Vec<String>,
}

/// Outcome of [`run_experiment`]: the manifest plus where things landed.
#[derive(Debug)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
}

/// Extra run switches that are not part of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Also write raw per-chain sample dumps with JSON sidecars.
    pub dump_samples: bool,
}

/// Runs the configured experiment and writes CSVs plus a manifest into the
/// output directory. Chains run in parallel; all randomness derives from
/// the master seed, so outputs are reproducible byte for byte.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let hash = config_hash(config)?;

    let built = config.problem.build(derive_seed(config.seed, "problem"))?;
    let problem = built.problem;
    let data_seed = derive_seed(config.seed, "data");
    let y = synthetic_data(&problem, data_seed)?;
    let truth = ground_truth(
        &problem,
        &y,
        derive_seed(config.seed, "ground-truth"),
        Some(config.output_dir.as_path()),
    )?;

    let kl = match kl_section(&problem) {
        Ok(section) => Some(section),
        Err(Error::UnsupportedPrior { .. }) => None,
        Err(other) => return Err(other),
    };
    let (bounds, bounds_note) = match kl_general_bounds(&problem) {
        Ok(report) => (Some(report), None),
        Err(err) => (None, Some(err.to_string())),
    };

    let mut samplers = Vec::with_capacity(config.samplers.len());
    let mut csv_paths = Vec::new();
    let mut any_truncated = false;

    for sampler in &config.samplers {
        let seeds: Vec<u64> = (0..config.n_chains)
            .map(|c| chain_seed(config.seed, c, sampler.name()))
            .collect();
        let runs: Vec<Result<ChainRun>> = seeds
            .par_iter()
            .map(|&seed| {
                run_chain(
                    &problem,
                    &y,
                    sampler,
                    config.n_steps,
                    config.solve_budget,
                    &config.checkpoints,
                    &truth,
                    seed,
                )
            })
            .collect();
        let runs: Vec<ChainRun> = runs.into_iter().collect::<Result<_>>()?;

        let mut chains = Vec::with_capacity(runs.len());
        for (index, run) in runs.iter().enumerate() {
            let path = config
                .output_dir
                .join(format!("{}_chain{}.csv", sampler.name(), index));
            write_series_csv(&path, &run.series)?;
            csv_paths.push(path);
            if options.dump_samples {
                let base = config
                    .output_dir
                    .join(format!("{}_chain{}_samples", sampler.name(), index));
                dump_chain_samples(&base, &run.samples, run.seed, &hash)?;
            }
            any_truncated |= run.truncated;
            chains.push(ManifestChain {
                chain_index: index as u32,
                seed: run.seed,
                steps: run.steps,
                acceptance_rate: run.acceptance_rate,
                forward_solves: run.forward_solves,
                inverse_solves: run.inverse_solves,
                truncated: run.truncated,
                mean_fallback: run.mean_fallback,
                skipped_bias_coordinates: run.skipped_bias_coordinates,
            });
        }
        let series_refs: Vec<&MetricSeries> = runs.iter().map(|r| &r.series).collect();
        let mean_path = config
            .output_dir
            .join(format!("{}_mean.csv", sampler.name()));
        write_mean_csv(&mean_path, &series_refs)?;
        csv_paths.push(mean_path);

        let mean_acceptance_rate =
            chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / chains.len() as f64;
        samplers.push(ManifestSampler {
            name: sampler.name().into(),
            mean_acceptance_rate,
            chains,
        });
    }

    let manifest = Manifest {
        schema: CONFIG_SCHEMA,
        config_hash: hash,
        config: config.clone(),
        data_seed,
        problem: ManifestProblem::from_problem(&problem),
        ground_truth: GroundTruthInfo {
            kind: truth.kind.into(),
            reference_count: truth.reference.len(),
            gamma: truth.gamma,
        },
        kl,
        bounds,
        bounds_note,
        samplers,
        truncated: any_truncated,
        csv_files: csv_paths
            .iter()
            .map(|p| {
                p.file_name()
                    .expect("csv file name")
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    let manifest_path = config.output_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunSummary {
        manifest,
        manifest_path,
        csv_paths,
    })
}

/// Divergence report for a Gaussian-prior problem, without running chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlCliReport {
    pub problem: ManifestProblem,
    #[serde(flatten)]
    pub kl: KlSection,
    pub bounds: Option<BoundReport>,
    pub bounds_note: Option<String>,
}

/// Builds the configured problem and evaluates the closed-form divergence
/// diagnostics. Errors when the prior is not the standard normal one the
/// closed forms require.
pub fn report_kl(config: &ExperimentConfig) -> Result<KlCliReport> {
    config.validate()?;
    let built = config.problem.build(derive_seed(config.seed, "problem"))?;
    let kl = kl_section(&built.problem)?;
    let (bounds, bounds_note) = match kl_general_bounds(&built.problem) {
        Ok(report) => (Some(report), None),
        Err(err) => (None, Some(err.to_string())),
    };
    Ok(KlCliReport {
        problem: ManifestProblem::from_problem(&built.problem),
        kl,
        bounds,
        bounds_note,
    })
}
