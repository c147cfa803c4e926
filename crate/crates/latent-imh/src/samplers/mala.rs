//! Metropolis-adjusted Langevin chain with Robbins-Monro step tuning.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::nuts::solves_consumed;
use super::targets::LogTarget;
use super::{ChainState, SampleBatch, StopRule};
use crate::error::{Error, Result};

/// Tuning knobs for [`MalaChain`].
#[derive(Debug, Clone, Copy)]
pub struct MalaOptions {
    /// Initial step size `h` (proposal is `x + h^2/2 grad + h xi`).
    pub initial_step: f64,
    /// Robbins-Monro acceptance target.
    pub target_accept: f64,
}

impl Default for MalaOptions {
    fn default() -> Self {
        MalaOptions {
            initial_step: 0.5,
            target_accept: 0.5,
        }
    }
}

/// Langevin proposal chain; the step size adapts toward the target
/// acceptance rate during warmup and is frozen afterwards.
pub struct MalaChain<T: LogTarget> {
    target: T,
    position: DVector<f64>,
    log_density: f64,
    gradient: DVector<f64>,
    step: f64,
    warmup_remaining: usize,
    adapt_t: f64,
    target_accept: f64,
    steps: u64,
    accepted: u64,
}

impl<T: LogTarget> MalaChain<T> {
    pub fn new(
        mut target: T,
        position: DVector<f64>,
        warmup: usize,
        options: MalaOptions,
    ) -> Result<Self> {
        if position.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                context: "MalaChain::new",
                expected: target.dim(),
                actual: position.len(),
            });
        }
        if !(options.initial_step > 0.0) {
            return Err(Error::InvalidArgument {
                context: "MalaChain::new",
                reason: "initial step must be positive".into(),
            });
        }
        let (log_density, gradient) = target.log_density_gradient(&position)?;
        Ok(MalaChain {
            target,
            position,
            log_density,
            gradient,
            step: options.initial_step,
            warmup_remaining: warmup,
            adapt_t: 0.0,
            target_accept: options.target_accept,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            position: self.position.clone(),
        }
    }

    pub fn target(&self) -> &T {
        &self.target
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

    /// One proposal/accept transition; returns whether it moved.
    pub fn step_once<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let d = self.position.len();
        let h = self.step;
        let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let drift = &self.position + (h * h / 2.0) * &self.gradient;
        let proposal = &drift + h * noise;
        let (prop_log_density, prop_gradient) = self.target.log_density_gradient(&proposal)?;

        // log q(x' -> x) - log q(x -> x').
        let reverse_drift = &proposal + (h * h / 2.0) * &prop_gradient;
        let forward_res = &proposal - &drift;
        let reverse_res = &self.position - &reverse_drift;
        let log_q_diff =
            (forward_res.norm_squared() - reverse_res.norm_squared()) / (2.0 * h * h);
        let log_ratio = prop_log_density - self.log_density + log_q_diff;

        let accept = log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio;
        if accept {
            self.position = proposal;
            self.log_density = prop_log_density;
            self.gradient = prop_gradient;
            self.accepted += 1;
        }
        if self.warmup_remaining > 0 {
            self.adapt_t += 1.0;
            let gain = 0.5 * self.adapt_t.powf(-0.6);
            let alpha = log_ratio.exp().min(1.0);
            self.step *= (gain * (alpha - self.target_accept)).exp();
            self.warmup_remaining -= 1;
        }
        self.steps += 1;
        Ok(accept)
    }

    /// Runs recorded steps per `stop` (construct with `warmup > 0` and burn
    /// those steps first if adaptation is wanted).
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, stop: StopRule) -> Result<SampleBatch> {
        let start = self.target.solve_snapshot().unwrap_or((0, 0));
        let mut samples = Vec::new();
        let mut accepted = 0u64;
        let mut steps = 0u64;
        while !stop.done(steps, {
            let (f, i) = solves_consumed(&self.target, start);
            f + i
        }) {
            if self.step_once(rng)? {
                accepted += 1;
            }
            steps += 1;
            samples.push(self.position.clone());
        }
        let (fwd, inv) = solves_consumed(&self.target, start);
        Ok(SampleBatch {
            samples,
            steps,
            accepted,
            acceptance_rate: if steps == 0 { f64::NAN } else { accepted as f64 / steps as f64 },
            forward_solves: fwd,
            inverse_solves: inv,
        })
    }

    /// Burns `n` adaptation steps without recording.
    pub fn warmup<R: Rng + ?Sized>(&mut self, rng: &mut R, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step_once(rng)?;
        }
        Ok(())
    }
}
