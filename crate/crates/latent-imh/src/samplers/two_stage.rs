//! Two-stage (delayed-acceptance) random-walk Metropolis.
//!
//! A symmetric Gaussian random-walk proposal is screened first against the
//! approximate posterior; only proposals that survive the cheap stage pay
//! for an exact forward application in the correction stage. The composite
//! kernel targets the exact posterior.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChainState, SampleBatch, StopRule};
use crate::error::{Error, Result};
use crate::models::{InverseProblem, OperatorChoice};

/// Tuning knobs for [`TwoStageChain`].
#[derive(Debug, Clone, Copy)]
pub struct TwoStageOptions {
    /// Initial random-walk step size.
    pub initial_step: f64,
    /// Robbins-Monro overall acceptance target.
    pub target_accept: f64,
}

impl Default for TwoStageOptions {
    fn default() -> Self {
        TwoStageOptions {
            initial_step: 0.5,
            target_accept: 0.3,
        }
    }
}

/// Delayed-acceptance random-walk chain over the exact posterior.
pub struct TwoStageChain {
    problem: InverseProblem,
    y: DVector<f64>,
    position: DVector<f64>,
    /// Cheap stage value: approximate log likelihood plus log prior.
    screen_value: f64,
    /// Exact minus approximate log likelihood at the current state.
    correction: f64,
    step: f64,
    warmup_remaining: usize,
    adapt_t: f64,
    target_accept: f64,
    steps: u64,
    accepted: u64,
    stage_two_evals: u64,
}

impl TwoStageChain {
    pub fn new(
        problem: InverseProblem,
        y: DVector<f64>,
        position: DVector<f64>,
        warmup: usize,
        options: TwoStageOptions,
    ) -> Result<Self> {
        if position.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                context: "TwoStageChain::new",
                expected: problem.dim(),
                actual: position.len(),
            });
        }
        if !(options.initial_step > 0.0) {
            return Err(Error::InvalidArgument {
                context: "TwoStageChain::new",
                reason: "initial step must be positive".into(),
            });
        }
        let approx_ll = problem.log_likelihood(&y, &position, OperatorChoice::Approx)?;
        let exact_ll = problem.log_likelihood(&y, &position, OperatorChoice::Exact)?;
        let screen_value = approx_ll + problem.log_prior(&position);
        Ok(TwoStageChain {
            problem,
            y,
            position,
            screen_value,
            correction: exact_ll - approx_ll,
            step: options.initial_step,
            warmup_remaining: warmup,
            adapt_t: 0.0,
            target_accept: options.target_accept,
            steps: 0,
            accepted: 0,
            stage_two_evals: 1, // the initialization above
        })
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            position: self.position.clone(),
        }
    }

    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.steps as f64
    }

    /// Exact-stage evaluations so far (including initialization).
    pub fn stage_two_evals(&self) -> u64 {
        self.stage_two_evals
    }

    /// One composite transition; returns whether it moved.
    pub fn step_once<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let d = self.position.len();
        let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let proposal = &self.position + self.step * noise;

        let approx_ll = self
            .problem
            .log_likelihood(&self.y, &proposal, OperatorChoice::Approx)?;
        let screen = approx_ll + self.problem.log_prior(&proposal);
        let stage_one = screen - self.screen_value;

        let mut alpha = stage_one.exp().min(1.0);
        let mut accept = false;
        if stage_one >= 0.0 || rng.gen::<f64>().ln() < stage_one {
            // Survived the screen; pay for the exact correction.
            let exact_ll = self
                .problem
                .log_likelihood(&self.y, &proposal, OperatorChoice::Exact)?;
            self.stage_two_evals += 1;
            let correction = exact_ll - approx_ll;
            let stage_two = correction - self.correction;
            alpha = (stage_one + stage_two).exp().min(1.0);
            if stage_two >= 0.0 || rng.gen::<f64>().ln() < stage_two {
                self.position = proposal;
                self.screen_value = screen;
                self.correction = correction;
                self.accepted += 1;
                accept = true;
            }
        }
        if self.warmup_remaining > 0 {
            self.adapt_t += 1.0;
            let gain = 0.5 * self.adapt_t.powf(-0.6);
            self.step *= (gain * (alpha - self.target_accept)).exp();
            self.warmup_remaining -= 1;
        }
        self.steps += 1;
        Ok(accept)
    }

    /// Burns `n` adaptation steps without recording.
    pub fn warmup<R: Rng + ?Sized>(&mut self, rng: &mut R, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step_once(rng)?;
        }
        Ok(())
    }

    /// Runs recorded steps per `stop`.
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, stop: StopRule) -> Result<SampleBatch> {
        let start = self.problem.counter_snapshot();
        let consumed = |p: &InverseProblem| {
            let (f, i) = p.counter_snapshot();
            f - start.0 + i - start.1
        };
        let mut samples = Vec::new();
        let mut accepted = 0u64;
        let mut steps = 0u64;
        while !stop.done(steps, consumed(&self.problem)) {
            if self.step_once(rng)? {
                accepted += 1;
            }
            steps += 1;
            samples.push(self.position.clone());
        }
        let now = self.problem.counter_snapshot();
        Ok(SampleBatch {
            samples,
            steps,
            accepted,
            acceptance_rate: if steps == 0 { f64::NAN } else { accepted as f64 / steps as f64 },
            forward_solves: now.0 - start.0,
            inverse_solves: now.1 - start.1,
        })
    }
}
