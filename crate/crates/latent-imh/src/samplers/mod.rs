//! Posterior samplers and the proposal engines behind them.
//!
//! The centerpiece is [`ImhChain`], an independence Metropolis-Hastings
//! chain over the exact posterior that comes in two variants:
//!
//! - [`ImhVariant::Approx`] proposes directly from the approximate-operator
//!   posterior in parameter space and pays one exact forward application
//!   per step to weigh the proposal.
//! - [`ImhVariant::Latent`] proposes in the latent (state) space, where the
//!   approximate and exact posteriors share their likelihood factor, and
//!   pays one exact inverse solve per step to pull the proposal back; the
//!   acceptance ratio then involves only prior densities.
//!
//! Both counts hold exactly, including the first step, which initializes
//! the chain from its own proposal distribution. Acceptance is decided in
//! the log domain, short-circuiting when the ratio is nonnegative, so
//! matching operators yield an acceptance rate of exactly one.
//!
//! Proposal draws come from an [`EngineChoice`]: closed-form Gaussian or
//! Gaussian-mixture conjugate engines when the prior allows, or an inner
//! no-U-turn chain on the approximate posterior otherwise. Baseline
//! samplers ([`MalaChain`], [`NutsChain`], [`TwoStageChain`]) share the
//! same [`LogTarget`] abstraction and cost accounting.

mod mala;
mod nuts;
mod targets;
mod two_stage;

pub use mala::{MalaChain, MalaOptions};
pub use nuts::{NutsChain, NutsOptions, NutsStepInfo};
pub use targets::{FnTarget, LogTarget, PosteriorTarget};
pub use two_stage::{TwoStageChain, TwoStageOptions};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InverseProblem, OperatorChoice, PriorFamily};

/// Publicly visible chain position.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: DVector<f64>,
}

/// Samples and cost accounting from one recorded run.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// Post-step positions, one per step.
    pub samples: Vec<DVector<f64>>,
    /// Steps taken in this run.
    pub steps: u64,
    /// Accepted transitions in this run (for trajectory samplers, steps).
    pub accepted: u64,
    /// Accepted / steps; for the no-U-turn sampler, the mean acceptance
    /// statistic.
    pub acceptance_rate: f64,
    /// Exact forward applications consumed by this run.
    pub forward_solves: u64,
    /// Exact inverse solves consumed by this run.
    pub inverse_solves: u64,
}

/// When a recorded run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// After this many recorded steps.
    Steps(u64),
    /// Once the run has consumed this many exact solves (forward plus
    /// inverse).
    SolveBudget(u64),
}

impl StopRule {
    pub(crate) fn done(&self, steps: u64, solves: u64) -> bool {
        match *self {
            StopRule::Steps(n) => steps >= n,
            StopRule::SolveBudget(budget) => solves >= budget,
        }
    }
}

/// Which independence-sampler variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImhVariant {
    /// Parameter-space proposals; one exact forward application per step.
    Approx,
    /// Latent-space proposals; one exact inverse solve per step.
    Latent,
}

impl ImhVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ImhVariant::Approx => "approx-imh",
            ImhVariant::Latent => "latent-imh",
        }
    }
}

/// How proposal draws from the approximate posterior are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineChoice {
    /// Resolve from the prior family: conjugate engines for standard normal
    /// and Gaussian-mixture priors, an inner no-U-turn chain otherwise.
    Auto,
    /// Closed-form Gaussian conjugate draws (standard normal prior only).
    ExactGaussian,
    /// Closed-form Gaussian-mixture conjugate draws (mixture prior only).
    ExactMixture,
    /// Persistent inner no-U-turn chain on the approximate posterior;
    /// each draw advances it `steps_per_draw` steps.
    InnerNuts {
        steps_per_draw: usize,
        warmup_steps: usize,
    },
}

impl Default for EngineChoice {
    fn default() -> Self {
        EngineChoice::Auto
    }
}

impl EngineChoice {
    /// Inner-chain engine with the default sixteen steps per draw.
    pub fn inner_nuts() -> Self {
        EngineChoice::InnerNuts {
            steps_per_draw: 16,
            warmup_steps: 500,
        }
    }

    fn resolve(self, family: PriorFamily) -> EngineChoice {
        match self {
            EngineChoice::Auto => match family {
                PriorFamily::StandardNormal => EngineChoice::ExactGaussian,
                PriorFamily::GaussianMixture => EngineChoice::ExactMixture,
                _ => EngineChoice::inner_nuts(),
            },
            other => other,
        }
    }
}

/// Closed-form conjugate machinery shared by the Gaussian engines: the
/// densified approximate data map and the Cholesky factor of its Gram
/// matrix `Atilde Atilde^T + sigma^2 I`.
struct ConjugateCore {
    /// `Atilde^T`, `d x d_y`.
    a_approx_t: DMatrix<f64>,
    chol_gram: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    sigma: f64,
    y: DVector<f64>,
}

impl ConjugateCore {
    fn build(problem: &InverseProblem, y: &DVector<f64>) -> Result<Self> {
        let d = problem.dim();
        let d_y = problem.obs_dim();
        let mut a_approx_t = DMatrix::zeros(d, d_y);
        let mut basis = DVector::zeros(d_y);
        for j in 0..d_y {
            basis[j] = 1.0;
            let column = problem.apply_a_approx_transpose(&basis)?;
            a_approx_t.set_column(j, &column);
            basis[j] = 0.0;
        }
        let sigma = problem.noise().sigma();
        let mut gram = a_approx_t.tr_mul(&a_approx_t);
        for i in 0..d_y {
            gram[(i, i)] += sigma * sigma;
        }
        let chol_gram =
            nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| Error::Singular {
                detail: "approximate data Gram matrix is not positive definite".into(),
            })?;
        Ok(ConjugateCore {
            a_approx_t,
            chol_gram,
            sigma,
            y: y.clone(),
        })
    }

    /// Draw from `N(center + Atilde^T Gram^{-1} residual, I - Atilde^T Gram^{-1} Atilde)`
    /// by Matheron's update: perturb, observe, correct.
    fn conditional_draw<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        center: &DVector<f64>,
        residual: &DVector<f64>,
    ) -> DVector<f64> {
        let d = self.a_approx_t.nrows();
        let d_y = self.a_approx_t.ncols();
        let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = DVector::from_fn(d_y, |_, _| rng.sample::<f64, _>(StandardNormal));
        let observed = self.a_approx_t.tr_mul(&xi) + self.sigma * eta;
        let innovation = self.chol_gram.solve(&(residual - observed));
        center + xi + &self.a_approx_t * innovation
    }
}

/// Proposal generator for the approximate posterior.
enum EngineState {
    Gaussian {
        core: ConjugateCore,
        mean: DVector<f64>,
    },
    Mixture {
        core: ConjugateCore,
        component_means: Vec<DVector<f64>>,
        residuals: Vec<DVector<f64>>,
        cumulative: Vec<f64>,
        mean: DVector<f64>,
    },
    Nuts {
        chain: Box<NutsChain<PosteriorTarget>>,
        steps_per_draw: usize,
        warmup_remaining: usize,
    },
}

impl EngineState {
    fn build(problem: &InverseProblem, y: &DVector<f64>, choice: EngineChoice) -> Result<Self> {
        let family = problem.prior().family();
        match choice.resolve(family) {
            EngineChoice::ExactGaussian => {
                if family != PriorFamily::StandardNormal {
                    return Err(Error::EngineMismatch {
                        reason: format!(
                            "closed-form Gaussian proposals need a standard normal prior \
                             (whiten general Gaussians first); found {}",
                            family.name()
                        ),
                    });
                }
                let core = ConjugateCore::build(problem, y)?;
                let mean = &core.a_approx_t * core.chol_gram.solve(y);
                Ok(EngineState::Gaussian { core, mean })
            }
            EngineChoice::ExactMixture => {
                let (weights, means) =
                    problem.prior().mixture_components().ok_or_else(|| {
                        Error::EngineMismatch {
                            reason: format!(
                                "closed-form mixture proposals need a Gaussian-mixture prior; \
                                 found {}",
                                family.name()
                            ),
                        }
                    })?;
                let component_means: Vec<DVector<f64>> = means.to_vec();
                let core = ConjugateCore::build(problem, y)?;
                let mut residuals = Vec::with_capacity(component_means.len());
                let mut log_weights = Vec::with_capacity(component_means.len());
                for (w, mu) in weights.iter().zip(&component_means) {
                    let predicted = core.a_approx_t.tr_mul(mu);
                    let r = y - predicted;
                    // Posterior component weight: prior weight times evidence.
                    let quad = r.dot(&core.chol_gram.solve(&r));
                    log_weights.push(w.ln() - 0.5 * quad);
                    residuals.push(r);
                }
                let max = log_weights.iter().cloned().fold(f64::MIN, f64::max);
                let mut cumulative = Vec::with_capacity(log_weights.len());
                let mut total = 0.0;
                for lw in &log_weights {
                    total += (lw - max).exp();
                    cumulative.push(total);
                }
                for c in &mut cumulative {
                    *c /= total;
                }
                let mut mean = DVector::zeros(problem.dim());
                let mut prev = 0.0;
                for ((mu, r), c) in component_means.iter().zip(&residuals).zip(&cumulative) {
                    let weight = c - prev;
                    prev = *c;
                    mean += weight * (mu + &core.a_approx_t * core.chol_gram.solve(r));
                }
                Ok(EngineState::Mixture {
                    core,
                    component_means,
                    residuals,
                    cumulative,
                    mean,
                })
            }
            EngineChoice::InnerNuts {
                steps_per_draw,
                warmup_steps,
            } => {
                if steps_per_draw == 0 {
                    return Err(Error::InvalidArgument {
                        context: "EngineChoice::InnerNuts",
                        reason: "steps_per_draw must be positive".into(),
                    });
                }
                let target = PosteriorTarget::new(
                    problem.share(),
                    y.clone(),
                    OperatorChoice::Approx,
                );
                let chain = NutsChain::new(
                    target,
                    DVector::zeros(problem.dim()),
                    warmup_steps,
                    NutsOptions::default(),
                )?;
                Ok(EngineState::Nuts {
                    chain: Box::new(chain),
                    steps_per_draw,
                    warmup_remaining: warmup_steps,
                })
            }
            EngineChoice::Auto => unreachable!("Auto resolves to a concrete engine"),
        }
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            EngineState::Gaussian { core, .. } => {
                let center = DVector::zeros(core.a_approx_t.nrows());
                let residual = core.y.clone();
                Ok(core.conditional_draw(rng, &center, &residual))
            }
            EngineState::Mixture {
                core,
                component_means,
                residuals,
                cumulative,
                ..
            } => {
                let u = rng.gen::<f64>();
                let j = cumulative
                    .iter()
                    .position(|c| u <= *c)
                    .unwrap_or(cumulative.len() - 1);
                Ok(core.conditional_draw(rng, &component_means[j], &residuals[j]))
            }
            EngineState::Nuts {
                chain,
                steps_per_draw,
                warmup_remaining,
            } => {
                if *warmup_remaining > 0 {
                    for _ in 0..*warmup_remaining {
                        chain.step(rng)?;
                    }
                    *warmup_remaining = 0;
                }
                for _ in 0..*steps_per_draw {
                    chain.step(rng)?;
                }
                Ok(chain.state().position)
            }
        }
    }

    fn mean(&self) -> Option<&DVector<f64>> {
        match self {
            EngineState::Gaussian { mean, .. } | EngineState::Mixture { mean, .. } => Some(mean),
            EngineState::Nuts { .. } => None,
        }
    }
}

/// Independence Metropolis-Hastings chain over the exact posterior,
/// proposing from the approximate posterior either in parameter space or
/// in latent space.
pub struct ImhChain {
    problem: InverseProblem,
    y: DVector<f64>,
    variant: ImhVariant,
    engine: EngineState,
    state: Option<ImhState>,
    steps: u64,
    accepted: u64,
}

struct ImhState {
    position: DVector<f64>,
    /// Log importance weight of the state: exact-over-proposal density
    /// ratio up to a constant.
    log_weight: f64,
}

impl std::fmt::Debug for ImhChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImhChain")
            .field("variant", &self.variant)
            .field("steps", &self.steps)
            .field("accepted", &self.accepted)
            .finish_non_exhaustive()
    }
}

impl ImhChain {
    pub fn new(
        problem: InverseProblem,
        y: DVector<f64>,
        variant: ImhVariant,
        engine: EngineChoice,
    ) -> Result<Self> {
        if y.len() != problem.obs_dim() {
            return Err(Error::DimensionMismatch {
                context: "ImhChain::new",
                expected: problem.obs_dim(),
                actual: y.len(),
            });
        }
        let engine = EngineState::build(&problem, &y, engine)?;
        Ok(ImhChain {
            problem,
            y,
            variant,
            engine,
            state: None,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn variant(&self) -> ImhVariant {
        self.variant
    }

    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    /// Mean of the proposal distribution, when the engine knows it in
    /// closed form.
    pub fn proposal_mean(&self) -> Option<&DVector<f64>> {
        self.engine.mean()
    }

    /// Current position (populated from the first step onwards).
    pub fn state(&self) -> Option<ChainState> {
        self.state.as_ref().map(|s| ChainState {
            position: s.position.clone(),
        })
    }

    /// Lifetime acceptance rate.
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.steps as f64
    }

    /// One transition: draw a proposal, weigh it against the current state,
    /// accept or reject. The first call initializes the chain from its own
    /// proposal (always accepted), so exact-solve counts equal steps from
    /// the start.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let pre_image = self.engine.draw(rng)?;
        let (position, log_weight) = match self.variant {
            ImhVariant::Approx => {
                let exact_ll =
                    self.problem
                        .log_likelihood(&self.y, &pre_image, OperatorChoice::Exact)?;
                let approx_ll =
                    self.problem
                        .log_likelihood(&self.y, &pre_image, OperatorChoice::Approx)?;
                (pre_image, exact_ll - approx_ll)
            }
            ImhVariant::Latent => {
                // Map the draw to the latent state it represents, then pull
                // back through the exact operator; likelihood factors cancel
                // because both posteriors see the same latent state.
                let latent = self.problem.apply_forward_approx(&pre_image)?;
                let position = self.problem.solve_forward(&latent)?;
                let log_weight =
                    self.problem.log_prior(&position) - self.problem.log_prior(&pre_image);
                (position, log_weight)
            }
        };
        let accept = match &self.state {
            None => true,
            Some(current) => {
                let log_ratio = log_weight - current.log_weight;
                log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
            }
        };
        self.steps += 1;
        if accept {
            self.accepted += 1;
            self.state = Some(ImhState {
                position,
                log_weight,
            });
        }
        Ok(accept)
    }

    /// Runs recorded steps per `stop`.
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, stop: StopRule) -> Result<SampleBatch> {
        let start = self.problem.counter_snapshot();
        let mut samples = Vec::new();
        let mut accepted = 0u64;
        let mut steps = 0u64;
        loop {
            let (f, i) = self.problem.counter_snapshot();
            if stop.done(steps, f - start.0 + i - start.1) {
                break;
            }
            if self.step(rng)? {
                accepted += 1;
            }
            steps += 1;
            samples.push(
                self.state
                    .as_ref()
                    .expect("state populated after first step")
                    .position
                    .clone(),
            );
        }
        let (f, i) = self.problem.counter_snapshot();
        Ok(SampleBatch {
            samples,
            steps,
            accepted,
            acceptance_rate: if steps == 0 {
                f64::NAN
            } else {
                accepted as f64 / steps as f64
            },
            forward_solves: f - start.0,
            inverse_solves: i - start.1,
        })
    }
}
