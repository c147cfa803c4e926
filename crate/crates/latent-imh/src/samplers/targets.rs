//! Log-density targets for the gradient-based samplers.

use nalgebra::DVector;

use crate::error::Result;
use crate::models::{InverseProblem, OperatorChoice};

/// Differentiable unnormalized log density.
///
/// Gradient-based kernels ([`super::MalaChain`], [`super::NutsChain`]) are
/// generic over this trait, so the same machinery drives the exact
/// posterior, the approximate posterior inside a proposal engine, and plain
/// test densities.
pub trait LogTarget {
    fn dim(&self) -> usize;

    fn log_density(&mut self, x: &DVector<f64>) -> Result<f64>;

    /// Log density together with its gradient.
    fn log_density_gradient(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// `(forward, inverse)` exact-solve counts behind this target, when it
    /// tracks any.
    fn solve_snapshot(&self) -> Option<(u64, u64)> {
        None
    }
}

/// Posterior in parameter space through the exact or the approximate
/// operator.
pub struct PosteriorTarget {
    problem: InverseProblem,
    y: DVector<f64>,
    choice: OperatorChoice,
}

impl PosteriorTarget {
    pub fn new(problem: InverseProblem, y: DVector<f64>, choice: OperatorChoice) -> Self {
        PosteriorTarget { problem, y, choice }
    }

    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.y
    }
}

impl LogTarget for PosteriorTarget {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn log_density(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.problem.log_likelihood(&self.y, x, self.choice)? + self.problem.log_prior(x))
    }

    fn log_density_gradient(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (ll, mut grad) = self
            .problem
            .log_likelihood_gradient(&self.y, x, self.choice)?;
        let (lp, prior_grad) = self.problem.log_prior_gradient(x);
        grad += prior_grad;
        Ok((ll + lp, grad))
    }

    fn solve_snapshot(&self) -> Option<(u64, u64)> {
        Some(self.problem.counter_snapshot())
    }
}

/// Target built from a closure returning `(log density, gradient)`
/// (testing and custom densities).
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f }
    }
}

impl<F> LogTarget for FnTarget<F>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.f)(x).0)
    }

    fn log_density_gradient(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Ok((self.f)(x))
    }
}
