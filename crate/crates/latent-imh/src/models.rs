//! Probabilistic model layer: priors, the Gaussian noise model, the inverse
//! problem bundle with exact-operator solve accounting, and closed-form
//! Gaussian posteriors.
//!
//! Everything evaluates in the log domain. The inverse problem holds a square
//! exact forward map, a cheap invertible approximation of it, and the
//! observation operator; methods that touch the exact map tick a shared
//! counter (`forward` for applications and adjoints, `inverse` for solves)
//! while the cheap-map paths are free. This is the cost model under which all
//! samplers in this crate are compared.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{LinearMap, SolveCounters};

/// Tag identifying a prior family without exposing its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorFamily {
    StandardNormal,
    Gaussian,
    GaussianMixture,
    Laplace,
    SmoothedTv,
}

impl PriorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PriorFamily::StandardNormal => "standard-normal",
            PriorFamily::Gaussian => "general-gaussian",
            PriorFamily::GaussianMixture => "gaussian-mixture",
            PriorFamily::Laplace => "laplace",
            PriorFamily::SmoothedTv => "smoothed-tv",
        }
    }
}

#[derive(Debug, Clone)]
enum PriorKind {
    StandardNormal {
        dim: usize,
    },
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        /// Lower Cholesky factor of the covariance.
        chol: DMatrix<f64>,
        log_norm: f64,
    },
    /// Mixture of Gaussians with shared identity covariance.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
    },
    /// Independent unit-rate double-exponential coordinates.
    Laplace {
        dim: usize,
    },
    /// Smoothed isotropic total variation on a `rows x cols` pixel grid,
    /// unnormalized: `log p(x) = -lambda * TV_eps(x)`.
    SmoothedTv {
        lambda: f64,
        epsilon: f64,
        rows: usize,
        cols: usize,
    },
}

/// Prior distribution over parameters.
#[derive(Debug, Clone)]
pub struct Prior {
    kind: PriorKind,
}

const LN_2PI: f64 = 1.837877066409345483560659472811;

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

impl Prior {
    pub fn standard_normal(dim: usize) -> Self {
        Prior {
            kind: PriorKind::StandardNormal { dim },
        }
    }

    /// General Gaussian prior; the covariance must be symmetric positive
    /// definite.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "Prior::gaussian",
                expected: d,
                actual: covariance.nrows(),
            });
        }
        let asym = (&covariance - covariance.transpose()).norm() / covariance.norm().max(1e-300);
        if asym > 1e-10 {
            return Err(Error::Asymmetric {
                context: "Prior::gaussian",
                asymmetry: asym,
            });
        }
        let chol = nalgebra::linalg::Cholesky::new(covariance.clone()).ok_or_else(|| {
            Error::InvalidArgument {
                context: "Prior::gaussian",
                reason: "covariance is not positive definite".into(),
            }
        })?;
        let l = chol.l();
        let mut log_det = 0.0;
        for i in 0..d {
            log_det += l[(i, i)].ln() * 2.0;
        }
        let log_norm = -0.5 * (d as f64 * LN_2PI + log_det);
        Ok(Prior {
            kind: PriorKind::Gaussian {
                mean,
                covariance,
                chol: l,
                log_norm,
            },
        })
    }

    /// Mixture of identity-covariance Gaussians. Weights must be positive;
    /// they are normalized to sum to one.
    pub fn gaussian_mixture(weights: Vec<f64>, means: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidArgument {
                context: "Prior::gaussian_mixture",
                reason: format!(
                    "needs matching nonempty weights/means; got {} and {}",
                    weights.len(),
                    means.len()
                ),
            });
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument {
                context: "Prior::gaussian_mixture",
                reason: "component means have mixed dimensions".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument {
                context: "Prior::gaussian_mixture",
                reason: "weights must be positive".into(),
            });
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Prior {
            kind: PriorKind::GaussianMixture { weights, means },
        })
    }

    /// Symmetric two-component mixture with means `±spread` along the first
    /// coordinate, the default well geometry for mixture experiments.
    pub fn two_well_mixture(dim: usize, spread: f64) -> Result<Self> {
        let mut plus = DVector::zeros(dim);
        plus[0] = spread;
        Self::gaussian_mixture(vec![0.5, 0.5], vec![plus.clone(), -plus])
    }

    pub fn laplace(dim: usize) -> Self {
        Prior {
            kind: PriorKind::Laplace { dim },
        }
    }

    /// Smoothed total-variation prior on a pixel grid (row-major layout).
    pub fn smoothed_tv(lambda: f64, epsilon: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument {
                context: "Prior::smoothed_tv",
                reason: format!("lambda must be positive; got {lambda}"),
            });
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument {
                context: "Prior::smoothed_tv",
                reason: format!("epsilon must be positive; got {epsilon}"),
            });
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument {
                context: "Prior::smoothed_tv",
                reason: "grid must be nonempty".into(),
            });
        }
        Ok(Prior {
            kind: PriorKind::SmoothedTv {
                lambda,
                epsilon,
                rows,
                cols,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PriorKind::StandardNormal { dim } | PriorKind::Laplace { dim } => *dim,
            PriorKind::Gaussian { mean, .. } => mean.len(),
            PriorKind::GaussianMixture { means, .. } => means[0].len(),
            PriorKind::SmoothedTv { rows, cols, .. } => rows * cols,
        }
    }

    pub fn family(&self) -> PriorFamily {
        match &self.kind {
            PriorKind::StandardNormal { .. } => PriorFamily::StandardNormal,
            PriorKind::Gaussian { .. } => PriorFamily::Gaussian,
            PriorKind::GaussianMixture { .. } => PriorFamily::GaussianMixture,
            PriorKind::Laplace { .. } => PriorFamily::Laplace,
            PriorKind::SmoothedTv { .. } => PriorFamily::SmoothedTv,
        }
    }

    /// Log density. Normalized for the Gaussian, mixture, and Laplace
    /// families; the smoothed-TV prior is unnormalized (its constant is
    /// unknown and cancels in every ratio this crate forms).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match &self.kind {
            PriorKind::StandardNormal { dim } => {
                -0.5 * (*dim as f64 * LN_2PI + x.norm_squared())
            }
            PriorKind::Gaussian {
                mean,
                chol,
                log_norm,
                ..
            } => {
                // Whitened residual through one triangular solve.
                let r = x - mean;
                let z = chol
                    .solve_lower_triangular(&r)
                    .expect("positive definite factor");
                log_norm - 0.5 * z.norm_squared()
            }
            PriorKind::GaussianMixture { weights, means } => {
                let d = means[0].len() as f64;
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(means)
                    .map(|(w, m)| w.ln() - 0.5 * (x - m).norm_squared())
                    .collect();
                log_sum_exp(&terms) - 0.5 * d * LN_2PI
            }
            PriorKind::Laplace { dim } => {
                -(*dim as f64) * std::f64::consts::LN_2 - x.iter().map(|v| v.abs()).sum::<f64>()
            }
            PriorKind::SmoothedTv {
                lambda,
                epsilon,
                rows,
                cols,
            } => -lambda * smoothed_tv(x, *epsilon, *rows, *cols).0,
        }
    }

    /// Log density together with its gradient (a subgradient at the Laplace
    /// kinks).
    pub fn log_density_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        debug_assert_eq!(x.len(), self.dim());
        match &self.kind {
            PriorKind::StandardNormal { .. } => (self.log_density(x), -x.clone()),
            PriorKind::Gaussian {
                mean,
                chol,
                log_norm,
                ..
            } => {
                let r = x - mean;
                let z = chol
                    .solve_lower_triangular(&r)
                    .expect("positive definite factor");
                let value = log_norm - 0.5 * z.norm_squared();
                // grad = -Sigma^{-1} (x - mean) = -L^{-T} z
                let g = chol
                    .tr_solve_lower_triangular(&z)
                    .expect("positive definite factor");
                (value, -g)
            }
            PriorKind::GaussianMixture { weights, means } => {
                let d = means[0].len() as f64;
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(means)
                    .map(|(w, m)| w.ln() - 0.5 * (x - m).norm_squared())
                    .collect();
                let lse = log_sum_exp(&terms);
                let mut grad = DVector::zeros(x.len());
                for (t, m) in terms.iter().zip(means) {
                    let r = (t - lse).exp();
                    grad.axpy(r, &(m - x), 1.0);
                }
                (lse - 0.5 * d * LN_2PI, grad)
            }
            PriorKind::Laplace { .. } => (
                self.log_density(x),
                DVector::from_fn(x.len(), |i, _| -x[i].signum()),
            ),
            PriorKind::SmoothedTv {
                lambda,
                epsilon,
                rows,
                cols,
            } => {
                let (tv, mut grad) = smoothed_tv(x, *epsilon, *rows, *cols);
                grad *= -*lambda;
                (-lambda * tv, grad)
            }
        }
    }

    /// Draws one sample. The smoothed-TV prior has no direct sampler.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        match &self.kind {
            PriorKind::StandardNormal { dim } => {
                Ok(DVector::from_fn(*dim, |_, _| rng.sample(StandardNormal)))
            }
            PriorKind::Gaussian { mean, chol, .. } => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
                Ok(mean + chol * z)
            }
            PriorKind::GaussianMixture { weights, means } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = means.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u <= acc {
                        pick = i;
                        break;
                    }
                }
                let z = DVector::from_fn(means[0].len(), |_, _| rng.sample(StandardNormal));
                Ok(&means[pick] + z)
            }
            PriorKind::Laplace { dim } => Ok(DVector::from_fn(*dim, |_, _| {
                let mag: f64 = rng.sample(Exp1);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })),
            PriorKind::SmoothedTv { .. } => Err(Error::Unsupported {
                operation: "direct sampling from the smoothed-TV prior",
            }),
        }
    }

    /// Mean and covariance, when this is a general Gaussian prior.
    pub fn gaussian_moments(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        match &self.kind {
            PriorKind::Gaussian {
                mean, covariance, ..
            } => Some((mean, covariance)),
            _ => None,
        }
    }

    /// Mixture component means, when this is a mixture prior.
    pub fn mixture_components(&self) -> Option<(&[f64], &[DVector<f64>])> {
        match &self.kind {
            PriorKind::GaussianMixture { weights, means } => {
                Some((weights.as_slice(), means.as_slice()))
            }
            _ => None,
        }
    }
}

/// Smoothed isotropic total variation of a row-major image and its gradient.
fn smoothed_tv(x: &DVector<f64>, epsilon: f64, rows: usize, cols: usize) -> (f64, DVector<f64>) {
    let at = |i: usize, j: usize| x[i * cols + j];
    let mut total = 0.0;
    let mut grad = DVector::zeros(x.len());
    for i in 0..rows {
        for j in 0..cols {
            let dv = if i + 1 < rows { at(i + 1, j) - at(i, j) } else { 0.0 };
            let dh = if j + 1 < cols { at(i, j + 1) - at(i, j) } else { 0.0 };
            let t = (dv * dv + dh * dh + epsilon * epsilon).sqrt();
            total += t;
            if i + 1 < rows {
                grad[(i + 1) * cols + j] += dv / t;
                grad[i * cols + j] -= dv / t;
            }
            if j + 1 < cols {
                grad[i * cols + j + 1] += dh / t;
                grad[i * cols + j] -= dh / t;
            }
        }
    }
    (total, grad)
}

/// Isotropic Gaussian observation noise with standard deviation `sigma`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument {
                context: "NoiseModel::new",
                reason: format!("sigma must be positive; got {sigma}"),
            });
        }
        Ok(NoiseModel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Log density of a residual vector.
    pub fn log_density(&self, residual: &DVector<f64>) -> f64 {
        let d = residual.len() as f64;
        -0.5 * residual.norm_squared() / self.variance()
            - 0.5 * d * (LN_2PI + 2.0 * self.sigma.ln())
    }
}

/// Which forward operator a likelihood evaluation goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorChoice {
    /// The exact operator; every evaluation is counted.
    Exact,
    /// The cheap approximate operator; free under the cost model.
    Approx,
}

/// Descriptive fields carried by generated problems into reports.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProblemMetadata {
    /// Short generator name, e.g. "diagonal-synthetic".
    pub family: String,
    /// Measured spectral error `|| I - Ftilde^{-1} F ||_2`, when computed.
    pub spectral_error: Option<f64>,
    /// Signal-to-noise ratio `E||y||^2 / E||e||^2` in log10, when known.
    pub snr_log10: Option<f64>,
    /// Image shape when parameters form a pixel grid (rows, cols).
    pub grid: Option<(usize, usize)>,
    /// Mean conjugate-gradient iterations per solve while assembling the
    /// cheap operator, when it came from an iterative solver.
    pub assembly_mean_pcg_iterations: Option<f64>,
}

#[derive(Debug)]
struct ProblemCore {
    forward: LinearMap,
    forward_approx: LinearMap,
    observation: LinearMap,
    prior: Prior,
    noise: NoiseModel,
    log_det_forward_approx: f64,
    metadata: ProblemMetadata,
}

/// A Bayesian linear inverse problem after reparameterization: a square exact
/// forward map, a cheap invertible approximation, and the observation
/// operator, together with prior, noise model, and solve counters.
///
/// Cloning ([`InverseProblem::fork_counters`]) shares the operators but gives
/// the clone its own counter object, so chains can run concurrently and their
/// exact-operator costs add up exactly.
#[derive(Debug)]
pub struct InverseProblem {
    core: Arc<ProblemCore>,
    counters: Arc<SolveCounters>,
}

impl InverseProblem {
    pub fn new(
        forward: LinearMap,
        forward_approx: LinearMap,
        observation: LinearMap,
        prior: Prior,
        noise: NoiseModel,
        metadata: ProblemMetadata,
    ) -> Result<Self> {
        let d = forward.rows();
        if forward.cols() != d {
            return Err(Error::NotSquare {
                rows: forward.rows(),
                cols: forward.cols(),
            });
        }
        if forward_approx.rows() != d || forward_approx.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "InverseProblem::new (approximate forward map)",
                expected: d,
                actual: forward_approx.rows(),
            });
        }
        if observation.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "InverseProblem::new (observation operator)",
                expected: d,
                actual: observation.cols(),
            });
        }
        if observation.rows() > d {
            return Err(Error::InvalidArgument {
                context: "InverseProblem::new",
                reason: format!(
                    "observation dimension {} exceeds parameter dimension {d}",
                    observation.rows()
                ),
            });
        }
        if prior.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "InverseProblem::new (prior)",
                expected: d,
                actual: prior.dim(),
            });
        }
        let log_det_forward_approx = forward_approx.log_abs_det()?;
        Ok(InverseProblem {
            core: Arc::new(ProblemCore {
                forward,
                forward_approx,
                observation,
                prior,
                noise,
                log_det_forward_approx,
                metadata,
            }),
            counters: Arc::new(SolveCounters::new()),
        })
    }

    /// Parameter dimension (equal to the latent dimension after
    /// reparameterization).
    pub fn dim(&self) -> usize {
        self.core.forward.rows()
    }

    /// Observation dimension.
    pub fn obs_dim(&self) -> usize {
        self.core.observation.rows()
    }

    pub fn prior(&self) -> &Prior {
        &self.core.prior
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.core.noise
    }

    pub fn metadata(&self) -> &ProblemMetadata {
        &self.core.metadata
    }

    /// The exact forward map. Going through this accessor bypasses counting;
    /// it exists for generation-time algebra and closed-form diagnostics.
    pub fn forward_map(&self) -> &LinearMap {
        &self.core.forward
    }

    /// The cheap approximate forward map (never counted).
    pub fn forward_approx_map(&self) -> &LinearMap {
        &self.core.forward_approx
    }

    /// The observation operator (never counted on its own).
    pub fn observation_map(&self) -> &LinearMap {
        &self.core.observation
    }

    /// `log |det Ftilde|`, precomputed at construction.
    pub fn log_det_forward_approx(&self) -> f64 {
        self.core.log_det_forward_approx
    }

    // --- counted exact-operator paths ---

    /// `F x`; counts one forward application.
    pub fn apply_forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_forward();
        self.core.forward.apply(x)
    }

    /// `F^T x`; counts one forward application (an adjoint touches the exact
    /// operator once).
    pub fn apply_forward_transpose(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_forward();
        self.core.forward.apply_transpose(x)
    }

    /// `F^{-1} u`; counts one inverse solve.
    pub fn solve_forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_inverse();
        self.core.forward.solve(u)
    }

    /// `F^{-T} u`; counts one inverse solve.
    pub fn solve_forward_transpose(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_inverse();
        self.core.forward.solve_transpose(u)
    }

    /// `A x = O F x`; one counted forward application.
    pub fn apply_a(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_forward();
        self.core.observation.apply(&self.core.forward.apply(x)?)
    }

    /// `A^T r = F^T O^T r`; one counted forward application.
    pub fn apply_a_transpose(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.counters.record_forward();
        self.core
            .forward
            .apply_transpose(&self.core.observation.apply_transpose(r)?)
    }

    // --- uncounted cheap-operator paths ---

    /// `Ftilde x` (uncounted).
    pub fn apply_forward_approx(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.core.forward_approx.apply(x)
    }

    /// `Ftilde^{-1} u` (uncounted).
    pub fn solve_forward_approx(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.core.forward_approx.solve(u)
    }

    /// `Ftilde^{-T} u` (uncounted).
    pub fn solve_forward_approx_transpose(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.core.forward_approx.solve_transpose(u)
    }

    /// `Atilde x = O Ftilde x` (uncounted).
    pub fn apply_a_approx(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.core
            .observation
            .apply(&self.core.forward_approx.apply(x)?)
    }

    /// `Atilde^T r` (uncounted).
    pub fn apply_a_approx_transpose(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.core
            .forward_approx
            .apply_transpose(&self.core.observation.apply_transpose(r)?)
    }

    /// `O u` (uncounted; the observation operator is cheap by assumption).
    pub fn apply_observation(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.core.observation.apply(u)
    }

    /// `O^T r` (uncounted).
    pub fn apply_observation_transpose(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.core.observation.apply_transpose(r)
    }

    // --- model evaluations ---

    pub fn log_prior(&self, x: &DVector<f64>) -> f64 {
        self.core.prior.log_density(x)
    }

    pub fn log_prior_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.core.prior.log_density_gradient(x)
    }

    /// `log q(y - A x)` through the chosen operator; the exact choice counts
    /// one forward application.
    pub fn log_likelihood(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        choice: OperatorChoice,
    ) -> Result<f64> {
        let prediction = match choice {
            OperatorChoice::Exact => self.apply_a(x)?,
            OperatorChoice::Approx => self.apply_a_approx(x)?,
        };
        Ok(self.core.noise.log_density(&(y - prediction)))
    }

    /// Likelihood value and gradient; the exact choice counts two forward
    /// applications (one apply, one adjoint).
    pub fn log_likelihood_gradient(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        choice: OperatorChoice,
    ) -> Result<(f64, DVector<f64>)> {
        let (prediction, residual, grad) = match choice {
            OperatorChoice::Exact => {
                let p = self.apply_a(x)?;
                let r = y - &p;
                let g = self.apply_a_transpose(&r)?;
                (p, r, g)
            }
            OperatorChoice::Approx => {
                let p = self.apply_a_approx(x)?;
                let r = y - &p;
                let g = self.apply_a_approx_transpose(&r)?;
                (p, r, g)
            }
        };
        let _ = prediction;
        Ok((
            self.core.noise.log_density(&residual),
            grad / self.core.noise.variance(),
        ))
    }

    /// Log density of the latent-space pullback prior
    /// `ptilde(u) = p(Ftilde^{-1} u) |det Ftilde|^{-1}` (uncounted).
    pub fn latent_prior_log_density(&self, u: &DVector<f64>) -> Result<f64> {
        let x = self.solve_forward_approx(u)?;
        Ok(self.core.prior.log_density(&x) - self.core.log_det_forward_approx)
    }

    /// Latent pullback prior with gradient `Ftilde^{-T} grad log p(Ftilde^{-1} u)`.
    pub fn latent_prior_log_density_gradient(
        &self,
        u: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        let x = self.solve_forward_approx(u)?;
        let (lp, g) = self.core.prior.log_density_gradient(&x);
        Ok((
            lp - self.core.log_det_forward_approx,
            self.solve_forward_approx_transpose(&g)?,
        ))
    }

    // --- counters ---

    /// `(forward, inverse)` counts so far.
    pub fn counter_snapshot(&self) -> (u64, u64) {
        self.counters.snapshot()
    }

    pub fn counters(&self) -> &SolveCounters {
        &self.counters
    }

    /// Same problem, fresh zeroed counters (for per-chain accounting).
    pub fn fork_counters(&self) -> InverseProblem {
        InverseProblem {
            core: Arc::clone(&self.core),
            counters: Arc::new(SolveCounters::new()),
        }
    }

    /// A second handle to the same problem that shares the same counters
    /// (cheap; lets samplers own their target while the caller keeps reading
    /// the counts).
    pub fn share(&self) -> InverseProblem {
        InverseProblem {
            core: Arc::clone(&self.core),
            counters: Arc::clone(&self.counters),
        }
    }

    /// Measures `|| I - Ftilde^{-1} F ||_2` by dense factorization
    /// (diagnostics; uncounted).
    pub fn spectral_error(&self) -> Result<f64> {
        let f = self.core.forward.to_dense()?;
        let ft = self.core.forward_approx.to_dense()?;
        let k_inv = ft
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Singular {
                detail: "approximate forward map is numerically singular".into(),
            })?;
        let residual = DMatrix::identity(f.nrows(), f.ncols()) - k_inv;
        let svd = residual.svd(false, false);
        Ok(svd.singular_values.max())
    }

    /// Rewrites a general-Gaussian-prior problem in whitened coordinates
    /// `z = Lp^{-1}(x - mean)` where the prior is standard normal, returning
    /// the new problem and the transform back to original coordinates.
    pub fn whiten(&self, y: &DVector<f64>) -> Result<(InverseProblem, WhitenTransform)> {
        let PriorKind::Gaussian { mean, chol, .. } = &self.core.prior.kind else {
            return Err(Error::UnsupportedPrior {
                found: self.core.prior.family().name(),
            });
        };
        let lp = LinearMap::dense(chol.clone());
        let forward = LinearMap::composed(vec![self.core.forward.clone(), lp.clone()])?;
        let forward_approx =
            LinearMap::composed(vec![self.core.forward_approx.clone(), lp])?;
        // Shift the data by the prior-mean prediction (generation-time
        // algebra over the exact operator; uncounted).
        let y_shift = self
            .core
            .observation
            .apply(&self.core.forward.apply(mean)?)?;
        let transform = WhitenTransform {
            chol: chol.clone(),
            mean: mean.clone(),
            whitened_y: y - y_shift,
        };
        let mut metadata = self.core.metadata.clone();
        metadata.family = format!("{}-whitened", metadata.family);
        let problem = InverseProblem::new(
            forward,
            forward_approx,
            self.core.observation.clone(),
            Prior::standard_normal(self.dim()),
            self.core.noise,
            metadata,
        )?;
        Ok((problem, transform))
    }
}

/// Coordinate transform produced by [`InverseProblem::whiten`].
#[derive(Debug, Clone)]
pub struct WhitenTransform {
    chol: DMatrix<f64>,
    mean: DVector<f64>,
    whitened_y: DVector<f64>,
}

impl WhitenTransform {
    /// Data vector for the whitened problem.
    pub fn whitened_y(&self) -> &DVector<f64> {
        &self.whitened_y
    }

    /// Maps a whitened sample back to original coordinates.
    pub fn to_original(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.chol * z
    }
}

/// Which posterior a closed-form computation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosteriorVariant {
    /// Exact operator everywhere.
    Exact,
    /// Approximate operator everywhere.
    Approx,
    /// Latent construction: sample under the approximate posterior in latent
    /// space, pull back through the exact solve.
    Latent,
}

/// Closed-form Gaussian posterior under a standard normal prior.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// The data-to-mean map (`mean = pseudo_inverse * y`).
    pub pseudo_inverse: DMatrix<f64>,
}

/// Closed-form posterior for the chosen variant. Requires a standard normal
/// prior; whiten general Gaussian problems first. Dense extraction of the
/// operators is uncounted (this is a diagnostics path).
pub fn gaussian_posterior(
    problem: &InverseProblem,
    y: &DVector<f64>,
    variant: PosteriorVariant,
) -> Result<GaussianPosterior> {
    if problem.prior().family() != PriorFamily::StandardNormal {
        return Err(Error::UnsupportedPrior {
            found: problem.prior().family().name(),
        });
    }
    if y.len() != problem.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_posterior",
            expected: problem.obs_dim(),
            actual: y.len(),
        });
    }
    let obs = problem.observation_map().to_dense()?;
    let sigma2 = problem.noise().variance();
    let d = problem.dim();

    let pseudo = |a: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        // a_dagger = A^T (A A^T + sigma^2 I)^{-1}
        let mut gram = a * a.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += sigma2;
        }
        let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| Error::Singular {
            detail: "observation Gram matrix is not positive definite".into(),
        })?;
        let solved = chol.solve(a); // (AA^T + s2 I)^{-1} A
        Ok((solved.transpose(), a.clone()))
    };

    let (a_dense, pseudo_inverse, pullback) = match variant {
        PosteriorVariant::Exact => {
            let a = &obs * problem.forward_map().to_dense()?;
            let (dag, a_out) = pseudo(&a)?;
            (a_out, dag, None)
        }
        PosteriorVariant::Approx => {
            let a = &obs * problem.forward_approx_map().to_dense()?;
            let (dag, a_out) = pseudo(&a)?;
            (a_out, dag, None)
        }
        PosteriorVariant::Latent => {
            let f = problem.forward_map().to_dense()?;
            let ft = problem.forward_approx_map().to_dense()?;
            let a_approx = &obs * &ft;
            let (dag, _) = pseudo(&a_approx)?;
            // K = F^{-1} Ftilde maps approximate-posterior draws to latent
            // pullback samples.
            let k = f.lu().solve(&ft).ok_or_else(|| Error::Singular {
                detail: "exact forward map is numerically singular".into(),
            })?;
            (a_approx, dag, Some(k))
        }
    };

    let base_cov = DMatrix::identity(d, d) - &pseudo_inverse * &a_dense;
    let (mean, covariance, pseudo_inverse) = match pullback {
        None => {
            let mean = &pseudo_inverse * y;
            (mean, base_cov, pseudo_inverse)
        }
        Some(k) => {
            let dag = &k * &pseudo_inverse;
            let mean = &dag * y;
            let cov = &k * base_cov * k.transpose();
            (mean, cov, dag)
        }
    };
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianPosterior {
        mean,
        covariance,
        pseudo_inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::LinearMap;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    fn finite_difference_gradient(
        f: impl Fn(&DVector<f64>) -> f64,
        x: &DVector<f64>,
    ) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(x.len(), |i, _| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
    }

    #[test]
    fn standard_normal_log_density_matches_formula() {
        let prior = Prior::standard_normal(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let expected = -0.5 * (3.0 * LN_2PI + 1.0 + 4.0 + 0.25);
        assert_relative_eq!(prior.log_density(&x), expected, epsilon = 1e-14);
        let (v, g) = prior.log_density_gradient(&x);
        assert_relative_eq!(v, expected, epsilon = 1e-14);
        assert_relative_eq!(g, -x, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_prior_identity_covariance_reduces_to_standard_normal() {
        let d = 4;
        let prior = Prior::gaussian(DVector::zeros(d), DMatrix::identity(d, d)).expect("SPD");
        let reference = Prior::standard_normal(d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random_vector(&mut rng, d);
            assert_relative_eq!(
                prior.log_density(&x),
                reference.log_density(&x),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn gaussian_prior_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let raw = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &raw * raw.transpose() + DMatrix::identity(d, d);
        let mean = random_vector(&mut rng, d);
        let prior = Prior::gaussian(mean, cov).expect("SPD");
        let x = random_vector(&mut rng, d);
        let (_, g) = prior.log_density_gradient(&x);
        let fd = finite_difference_gradient(|x| prior.log_density(x), &x);
        assert_relative_eq!(g, fd, epsilon = 1e-5, max_relative = 1e-5);
    }

    #[test]
    fn mixture_density_oracles() {
        let d = 3;
        let mean = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let single =
            Prior::gaussian_mixture(vec![2.0], vec![mean.clone()]).expect("valid mixture");
        let reference = Prior::gaussian(mean, DMatrix::identity(d, d)).expect("SPD");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = random_vector(&mut rng, d);
            assert_relative_eq!(
                single.log_density(&x),
                reference.log_density(&x),
                epsilon = 1e-12
            );
        }

        let two = Prior::two_well_mixture(d, 2.5).expect("valid mixture");
        for _ in 0..5 {
            let x = random_vector(&mut rng, d);
            let mut flipped = x.clone();
            flipped[0] = -flipped[0];
            assert_relative_eq!(two.log_density(&x), two.log_density(&flipped), epsilon = 1e-12);
        }
    }

    #[test]
    fn mixture_gradient_matches_finite_differences() {
        let prior = Prior::two_well_mixture(3, 1.5).expect("valid mixture");
        let x = DVector::from_vec(vec![0.3, -0.8, 0.2]);
        let (_, g) = prior.log_density_gradient(&x);
        let fd = finite_difference_gradient(|x| prior.log_density(x), &x);
        assert_relative_eq!(g, fd, epsilon = 1e-5, max_relative = 1e-5);
    }

    #[test]
    fn laplace_density_and_gradient() {
        let prior = Prior::laplace(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_relative_eq!(
            prior.log_density(&x),
            -3.0 * std::f64::consts::LN_2 - 3.5,
            epsilon = 1e-14
        );
        let (_, g) = prior.log_density_gradient(&x);
        assert_relative_eq!(g, DVector::from_vec(vec![-1.0, 1.0, -1.0]), epsilon = 1e-14);
    }

    #[test]
    fn smoothed_tv_hand_oracle_2x2() {
        // Row-major grid [[a, b], [c, d]] = [1, 2, 4, 7], epsilon = 0.1.
        let (a, b, c, d) = (1.0f64, 2.0, 4.0, 7.0);
        let eps = 0.1f64;
        let expected_tv = ((c - a).powi(2) + (b - a).powi(2) + eps * eps).sqrt()
            + ((d - b).powi(2) + eps * eps).sqrt()
            + ((d - c).powi(2) + eps * eps).sqrt()
            + eps;
        let lambda = 2.0;
        let prior = Prior::smoothed_tv(lambda, eps, 2, 2).expect("valid prior");
        let x = DVector::from_vec(vec![a, b, c, d]);
        assert_relative_eq!(prior.log_density(&x), -lambda * expected_tv, epsilon = 1e-12);
    }

    #[test]
    fn smoothed_tv_gradient_matches_finite_differences() {
        let prior = Prior::smoothed_tv(1.5, 0.01, 3, 4).expect("valid prior");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_vector(&mut rng, 12);
        let (_, g) = prior.log_density_gradient(&x);
        let fd = finite_difference_gradient(|x| prior.log_density(x), &x);
        assert_relative_eq!(g, fd, epsilon = 1e-4, max_relative = 1e-4);
    }

    #[test]
    fn prior_samples_match_first_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = Prior::two_well_mixture(2, 3.0).expect("valid mixture");
        let n = 20_000;
        let mut mean = DVector::zeros(2);
        let mut abs_first = 0.0;
        for _ in 0..n {
            let s = prior.sample(&mut rng).expect("sampleable");
            abs_first += s[0].abs();
            mean += s;
        }
        mean /= n as f64;
        // Symmetric wells: mean near zero, |x_0| concentrated near the spread.
        assert!(mean.norm() < 0.1, "mixture mean {mean:?} too far from zero");
        assert!((abs_first / n as f64 - 3.0).abs() < 0.1);

        let laplace = Prior::laplace(1);
        let mut var = 0.0;
        for _ in 0..n {
            let s = laplace.sample(&mut rng).expect("sampleable");
            var += s[0] * s[0];
        }
        var /= n as f64;
        assert!((var - 2.0).abs() < 0.1, "Laplace variance {var} not near 2");
    }

    #[test]
    fn noise_log_density_formula() {
        let noise = NoiseModel::new(0.5).expect("positive sigma");
        let r = DVector::from_vec(vec![0.3, -0.4]);
        let expected = -0.5 * 0.25 / 0.25 - 0.5 * 2.0 * (LN_2PI + 2.0 * 0.5f64.ln());
        assert_relative_eq!(noise.log_density(&r), expected, epsilon = 1e-14);
        assert!(NoiseModel::new(0.0).is_err());
    }

    fn small_problem(rng: &mut ChaCha8Rng, d: usize, d_y: usize) -> InverseProblem {
        let f = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
            + DMatrix::identity(d, d) * 3.0;
        let ft = &f + DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.05;
        let o = DMatrix::from_fn(d_y, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        InverseProblem::new(
            LinearMap::dense(f),
            LinearMap::dense(ft),
            LinearMap::dense(o),
            Prior::standard_normal(d),
            NoiseModel::new(0.3).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect("valid problem")
    }

    #[test]
    fn latent_prior_diagonal_change_of_variables_oracle() {
        // Ftilde = diag(c): ptilde(u) = p(u / c) / prod |c_i|.
        let d = 3;
        let scales = DVector::from_vec(vec![2.0, 0.5, -1.5]);
        let problem = InverseProblem::new(
            LinearMap::identity(d),
            LinearMap::diagonal(scales.clone()),
            LinearMap::identity(d),
            Prior::standard_normal(d),
            NoiseModel::new(1.0).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect("valid problem");
        let u = DVector::from_vec(vec![0.7, -0.2, 1.1]);
        let x = DVector::from_fn(d, |i, _| u[i] / scales[i]);
        let expected = Prior::standard_normal(d).log_density(&x)
            - scales.iter().map(|c| c.abs().ln()).sum::<f64>();
        assert_relative_eq!(
            problem.latent_prior_log_density(&u).expect("solvable"),
            expected,
            epsilon = 1e-12
        );
        let (v, g) = problem
            .latent_prior_log_density_gradient(&u)
            .expect("solvable");
        assert_relative_eq!(v, expected, epsilon = 1e-12);
        let fd = finite_difference_gradient(
            |u| problem.latent_prior_log_density(u).expect("solvable"),
            &u,
        );
        assert_relative_eq!(g, fd, epsilon = 1e-6, max_relative = 1e-6);
    }

    #[test]
    fn counters_track_exact_paths_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let problem = small_problem(&mut rng, 4, 2);
        let x = random_vector(&mut rng, 4);
        let r = random_vector(&mut rng, 2);
        assert_eq!(problem.counter_snapshot(), (0, 0));

        problem.apply_forward(&x).expect("apply");
        assert_eq!(problem.counter_snapshot(), (1, 0));
        problem.apply_forward_transpose(&x).expect("adjoint");
        assert_eq!(problem.counter_snapshot(), (2, 0));
        problem.apply_a(&x).expect("apply");
        assert_eq!(problem.counter_snapshot(), (3, 0));
        problem.apply_a_transpose(&r).expect("adjoint");
        assert_eq!(problem.counter_snapshot(), (4, 0));
        problem.solve_forward(&x).expect("solve");
        assert_eq!(problem.counter_snapshot(), (4, 1));

        // Cheap paths stay free.
        problem.apply_forward_approx(&x).expect("apply");
        problem.solve_forward_approx(&x).expect("solve");
        problem.apply_a_approx(&x).expect("apply");
        problem.latent_prior_log_density(&x).expect("density");
        problem.apply_observation(&x).expect("apply");
        assert_eq!(problem.counter_snapshot(), (4, 1));

        // Likelihood: exact counts, approximate does not.
        let y = random_vector(&mut rng, 2);
        problem
            .log_likelihood(&y, &x, OperatorChoice::Approx)
            .expect("likelihood");
        assert_eq!(problem.counter_snapshot(), (4, 1));
        problem
            .log_likelihood(&y, &x, OperatorChoice::Exact)
            .expect("likelihood");
        assert_eq!(problem.counter_snapshot(), (5, 1));
        problem
            .log_likelihood_gradient(&y, &x, OperatorChoice::Exact)
            .expect("gradient");
        assert_eq!(problem.counter_snapshot(), (7, 1));

        // Forked chains count independently.
        let fork = problem.fork_counters();
        fork.apply_forward(&x).expect("apply");
        assert_eq!(fork.counter_snapshot(), (1, 0));
        assert_eq!(problem.counter_snapshot(), (7, 1));
    }

    #[test]
    fn gaussian_posterior_matches_precision_form_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let problem = small_problem(&mut rng, 6, 3);
        let y = random_vector(&mut rng, 3);
        let sigma2 = problem.noise().variance();
        let f = problem.forward_map().to_dense().expect("dense");
        let ft = problem.forward_approx_map().to_dense().expect("dense");
        let o = problem.observation_map().to_dense().expect("dense");
        let a = &o * &f;
        let a_approx = &o * &ft;

        let precision_route = |a: &DMatrix<f64>, prior_precision: &DMatrix<f64>| {
            let lam = prior_precision + a.transpose() * a / sigma2;
            let cov = lam.clone().try_inverse().expect("posterior precision SPD");
            let mean = &cov * (a.transpose() * &y) / sigma2;
            (mean, cov)
        };
        let eye = DMatrix::identity(6, 6);

        let exact = gaussian_posterior(&problem, &y, PosteriorVariant::Exact).expect("posterior");
        let (mean_ref, cov_ref) = precision_route(&a, &eye);
        assert_relative_eq!(exact.mean, mean_ref, epsilon = 1e-9);
        assert_relative_eq!(exact.covariance, cov_ref, epsilon = 1e-9);

        let approx =
            gaussian_posterior(&problem, &y, PosteriorVariant::Approx).expect("posterior");
        let (mean_ref, cov_ref) = precision_route(&a_approx, &eye);
        assert_relative_eq!(approx.mean, mean_ref, epsilon = 1e-9);
        assert_relative_eq!(approx.covariance, cov_ref, epsilon = 1e-9);

        // Latent pullback: the density of F^{-1} u with u drawn from the
        // approximate latent posterior has precision K^{-T} K^{-1} + A^T A / s2
        // where K = F^{-1} Ftilde. This is an independent algebraic route.
        let latent =
            gaussian_posterior(&problem, &y, PosteriorVariant::Latent).expect("posterior");
        let k_inv = ft.clone().lu().solve(&f).expect("invertible");
        let prior_precision = k_inv.transpose() * &k_inv;
        let (mean_ref, cov_ref) = precision_route(&a, &prior_precision);
        assert_relative_eq!(latent.mean, mean_ref, epsilon = 1e-8);
        assert_relative_eq!(latent.covariance, cov_ref, epsilon = 1e-8);

        // mean = pseudo_inverse * y for every variant.
        assert_relative_eq!(&latent.pseudo_inverse * &y, latent.mean, epsilon = 1e-12);
    }

    #[test]
    fn whitening_matches_direct_gaussian_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 5;
        let d_y = 2;
        let raw = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &raw * raw.transpose() + DMatrix::identity(d, d) * 0.5;
        let mean = random_vector(&mut rng, d);
        let f = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
            + DMatrix::identity(d, d) * 3.0;
        let o = DMatrix::from_fn(d_y, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let problem = InverseProblem::new(
            LinearMap::dense(f.clone()),
            LinearMap::dense(f.clone()),
            LinearMap::dense(o.clone()),
            Prior::gaussian(mean.clone(), cov.clone()).expect("SPD"),
            NoiseModel::new(0.4).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect("valid problem");
        let y = random_vector(&mut rng, d_y);

        let (white, transform) = problem.whiten(&y).expect("whitening");
        assert_eq!(white.prior().family(), PriorFamily::StandardNormal);
        let post_z = gaussian_posterior(&white, transform.whitened_y(), PosteriorVariant::Exact)
            .expect("posterior");
        let mean_x = transform.to_original(&post_z.mean);
        let chol = nalgebra::linalg::Cholesky::new(cov.clone()).expect("SPD").l();
        let cov_x = &chol * post_z.covariance * chol.transpose();

        // Direct route with the general Gaussian prior.
        let a = &o * &f;
        let sigma2 = 0.4f64 * 0.4;
        let prior_precision = cov.clone().try_inverse().expect("SPD");
        let lam = &prior_precision + a.transpose() * &a / sigma2;
        let cov_ref = lam.try_inverse().expect("SPD");
        let mean_ref = &cov_ref * (&prior_precision * &mean + a.transpose() * &y / sigma2);
        assert_relative_eq!(mean_x, mean_ref, epsilon = 1e-8);
        assert_relative_eq!(cov_x, cov_ref, epsilon = 1e-8);
    }

    #[test]
    fn constructor_validates_dimensions() {
        let err = InverseProblem::new(
            LinearMap::dense(DMatrix::zeros(3, 2)),
            LinearMap::identity(2),
            LinearMap::identity(2),
            Prior::standard_normal(2),
            NoiseModel::new(1.0).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect_err("non-square forward map");
        assert!(matches!(err, Error::NotSquare { .. }));

        let err = InverseProblem::new(
            LinearMap::identity(2),
            LinearMap::identity(2),
            LinearMap::dense(DMatrix::zeros(3, 2)),
            Prior::standard_normal(2),
            NoiseModel::new(1.0).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect_err("observation taller than parameter dim");
        assert!(matches!(err, Error::InvalidArgument { .. }));

        // Singular approximate map is rejected at construction.
        let err = InverseProblem::new(
            LinearMap::identity(2),
            LinearMap::diagonal(DVector::from_vec(vec![1.0, 0.0])),
            LinearMap::identity(2),
            Prior::standard_normal(2),
            NoiseModel::new(1.0).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect_err("singular approximate forward map");
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn spectral_error_diagonal_oracle() {
        let d = 4;
        let s = DVector::from_vec(vec![1.0, 0.5, 0.25, 0.125]);
        let alpha = DVector::from_vec(vec![1.1, 0.9, 1.05, 0.98]);
        let scaled = s.component_mul(&alpha);
        let problem = InverseProblem::new(
            LinearMap::diagonal(s),
            LinearMap::diagonal(scaled),
            LinearMap::identity(d),
            Prior::standard_normal(d),
            NoiseModel::new(1.0).expect("positive sigma"),
            ProblemMetadata::default(),
        )
        .expect("valid problem");
        // || I - Ftilde^{-1} F ||_2 = max_i |1 - 1/alpha_i|
        let expected = alpha
            .iter()
            .map(|a| (1.0 - 1.0 / a).abs())
            .fold(0.0f64, f64::max);
        assert_relative_eq!(
            problem.spectral_error().expect("dense"),
            expected,
            epsilon = 1e-12
        );
    }
}
