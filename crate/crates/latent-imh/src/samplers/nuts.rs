//! Simplified no-U-turn sampler.
//!
//! Multinomial trajectory sampling over doubling leapfrog trees with an
//! identity mass matrix, a hard divergence cutoff, and dual-averaging
//! step-size adaptation during warmup. Deliberately minimal: no mass-matrix
//! estimation, no windowed adaptation schedule.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::targets::LogTarget;
use super::{ChainState, SampleBatch, StopRule};
use crate::error::{Error, Result};

/// Tuning knobs for [`NutsChain`].
#[derive(Debug, Clone, Copy)]
pub struct NutsOptions {
    /// Maximum tree depth (trajectory length up to `2^max_depth` states).
    pub max_depth: usize,
    /// Energy-error threshold beyond which a trajectory counts as divergent.
    pub divergence_threshold: f64,
    /// Dual-averaging target mean acceptance statistic.
    pub target_accept: f64,
}

impl Default for NutsOptions {
    fn default() -> Self {
        NutsOptions {
            max_depth: 10,
            divergence_threshold: 1000.0,
            target_accept: 0.8,
        }
    }
}

/// Dual-averaging step-size controller.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub(crate) fn new(initial_step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
            h_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    pub(crate) fn update(&mut self, accept_stat: f64) {
        self.t += 1.0;
        let eta = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let weight = self.t.powf(-Self::KAPPA);
        self.log_step_avg = weight * self.log_step + (1.0 - weight) * self.log_step_avg;
    }

    /// Step size to use while still adapting.
    pub(crate) fn adapting_step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Smoothed step size to freeze after warmup.
    pub(crate) fn frozen_step(&self) -> f64 {
        self.log_step_avg.exp()
    }
}

/// Phase-space point with cached gradient.
#[derive(Clone)]
struct PhasePoint {
    position: DVector<f64>,
    momentum: DVector<f64>,
    gradient: DVector<f64>,
    log_density: f64,
}

impl PhasePoint {
    fn energy(&self) -> f64 {
        -self.log_density + 0.5 * self.momentum.norm_squared()
    }
}

/// Summary of one outer step.
#[derive(Debug, Clone, Copy)]
pub struct NutsStepInfo {
    /// Mean Metropolis statistic over the trajectory (drives adaptation).
    pub accept_stat: f64,
    /// Depth reached before a stopping criterion fired.
    pub depth: usize,
    /// Whether the trajectory hit the divergence threshold.
    pub divergent: bool,
    /// Leapfrog steps spent.
    pub leapfrogs: u64,
    /// Step size used.
    pub step_size: f64,
}

struct Tree {
    backward: PhasePoint,
    forward: PhasePoint,
    proposal: PhasePoint,
    log_sum_weight: f64,
    accept_sum: f64,
    states: u64,
    turning: bool,
    divergent: bool,
}

/// No-U-turn chain over a differentiable target.
pub struct NutsChain<T: LogTarget> {
    target: T,
    options: NutsOptions,
    position: DVector<f64>,
    gradient: DVector<f64>,
    log_density: f64,
    adapter: Option<DualAveraging>,
    step_size: f64,
    warmup_remaining: usize,
    initialized: bool,
    steps: u64,
    accept_stat_sum: f64,
}

impl<T: LogTarget> NutsChain<T> {
    /// Chain at `position`, adapting its step size for the first `warmup`
    /// steps and frozen afterwards.
    pub fn new(
        mut target: T,
        position: DVector<f64>,
        warmup: usize,
        options: NutsOptions,
    ) -> Result<Self> {
        if position.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                context: "NutsChain::new",
                expected: target.dim(),
                actual: position.len(),
            });
        }
        let (log_density, gradient) = target.log_density_gradient(&position)?;
        if !log_density.is_finite() {
            return Err(Error::InvalidArgument {
                context: "NutsChain::new",
                reason: "initial position has non-finite log density".into(),
            });
        }
        Ok(NutsChain {
            target,
            options,
            position,
            gradient,
            log_density,
            adapter: None,
            step_size: 1.0,
            warmup_remaining: warmup,
            initialized: false,
            steps: 0,
            accept_stat_sum: 0.0,
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
        self.step_size
    }

    /// Mean acceptance statistic over all steps so far.
    pub fn mean_accept_stat(&self) -> f64 {
        if self.steps == 0 {
            return f64::NAN;
        }
        self.accept_stat_sum / self.steps as f64
    }

    fn leapfrog(&mut self, point: &PhasePoint, step: f64) -> Result<(PhasePoint, u64)> {
        let mut momentum = &point.momentum + 0.5 * step * &point.gradient;
        let position = &point.position + step * &momentum;
        let (log_density, gradient) = self.target.log_density_gradient(&position)?;
        momentum += 0.5 * step * &gradient;
        Ok((
            PhasePoint {
                position,
                momentum,
                gradient,
                log_density,
            },
            1,
        ))
    }

    /// Crude step-size search: scale by powers of two until the one-step
    /// acceptance probability crosses one half.
    fn find_initial_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let d = self.position.len();
        let momentum = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let start = PhasePoint {
            position: self.position.clone(),
            momentum,
            gradient: self.gradient.clone(),
            log_density: self.log_density,
        };
        let h0 = start.energy();
        let mut step = 1.0f64;
        let log_accept = |chain: &mut Self, s: f64| -> Result<f64> {
            let (next, _) = chain.leapfrog(&start, s)?;
            let e = next.energy();
            Ok(if e.is_finite() { h0 - e } else { f64::NEG_INFINITY })
        };
        let mut a = log_accept(self, step)?;
        let dir: f64 = if a > (0.5f64).ln() { 1.0 } else { -1.0 };
        for _ in 0..60 {
            if dir > 0.0 && a <= (0.5f64).ln() {
                break;
            }
            if dir < 0.0 && a >= (0.5f64).ln() {
                break;
            }
            step *= (2.0f64).powf(dir);
            if !(1e-12..=1e6).contains(&step) {
                break;
            }
            a = log_accept(self, step)?;
        }
        Ok(step)
    }

    fn build_tree<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        depth: usize,
        from: &PhasePoint,
        direction: f64,
        step: f64,
        h0: f64,
        leapfrogs: &mut u64,
    ) -> Result<Tree> {
        if depth == 0 {
            let (point, n) = self.leapfrog(from, direction * step)?;
            *leapfrogs += n;
            let energy = point.energy();
            let log_weight = if energy.is_finite() { h0 - energy } else { f64::NEG_INFINITY };
            let divergent = !energy.is_finite()
                || energy - h0 > self.options.divergence_threshold;
            return Ok(Tree {
                backward: point.clone(),
                forward: point.clone(),
                accept_sum: log_weight.exp().min(1.0),
                states: 1,
                log_sum_weight: log_weight,
                turning: false,
                divergent,
                proposal: point,
            });
        }

        let first = self.build_tree(rng, depth - 1, from, direction, step, h0, leapfrogs)?;
        if first.divergent || first.turning {
            return Ok(first);
        }
        let grow_from = if direction > 0.0 {
            first.forward.clone()
        } else {
            first.backward.clone()
        };
        let second =
            self.build_tree(rng, depth - 1, &grow_from, direction, step, h0, leapfrogs)?;

        let log_sum_weight = log_add_exp(first.log_sum_weight, second.log_sum_weight);
        let take_second =
            (second.log_sum_weight - log_sum_weight).exp() > rng.gen::<f64>();
        let proposal = if take_second && !second.divergent {
            second.proposal.clone()
        } else {
            first.proposal
        };
        let (backward, forward) = if direction > 0.0 {
            (first.backward, second.forward.clone())
        } else {
            (second.backward.clone(), first.forward)
        };
        let span = &forward.position - &backward.position;
        let turning = second.turning
            || span.dot(&backward.momentum) < 0.0
            || span.dot(&forward.momentum) < 0.0;
        Ok(Tree {
            backward,
            forward,
            proposal,
            log_sum_weight,
            accept_sum: first.accept_sum + second.accept_sum,
            states: first.states + second.states,
            turning,
            divergent: second.divergent,
        })
    }

    /// One outer transition.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<NutsStepInfo> {
        if !self.initialized {
            let step0 = self.find_initial_step(rng)?;
            self.adapter = Some(DualAveraging::new(step0, self.options.target_accept));
            self.step_size = step0;
            self.initialized = true;
        }
        let step = self.step_size;
        let d = self.position.len();
        let momentum = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let start = PhasePoint {
            position: self.position.clone(),
            momentum,
            gradient: self.gradient.clone(),
            log_density: self.log_density,
        };
        let h0 = start.energy();

        let mut backward = start.clone();
        let mut forward = start.clone();
        let mut proposal = start;
        let mut log_sum_weight = 0.0f64; // weight of the initial state
        let mut accept_sum = 0.0f64;
        let mut states = 0u64;
        let mut leapfrogs = 0u64;
        let mut depth = 0usize;
        let mut divergent = false;

        while depth < self.options.max_depth {
            let direction: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let from = if direction > 0.0 {
                forward.clone()
            } else {
                backward.clone()
            };
            let subtree =
                self.build_tree(rng, depth, &from, direction, step, h0, &mut leapfrogs)?;
            accept_sum += subtree.accept_sum;
            states += subtree.states;
            if subtree.divergent {
                divergent = true;
                break;
            }
            if !subtree.turning {
                let total = log_add_exp(log_sum_weight, subtree.log_sum_weight);
                if (subtree.log_sum_weight - total).exp() > rng.gen::<f64>() {
                    proposal = subtree.proposal.clone();
                }
                log_sum_weight = total;
            }
            if direction > 0.0 {
                forward = subtree.forward;
            } else {
                backward = subtree.backward;
            }
            let span = &forward.position - &backward.position;
            if subtree.turning
                || span.dot(&backward.momentum) < 0.0
                || span.dot(&forward.momentum) < 0.0
            {
                depth += 1;
                break;
            }
            depth += 1;
        }

        self.position = proposal.position;
        self.gradient = proposal.gradient;
        self.log_density = proposal.log_density;

        let accept_stat = if states == 0 {
            0.0
        } else {
            accept_sum / states as f64
        };
        if self.warmup_remaining > 0 {
            let adapter = self.adapter.as_mut().expect("initialized above");
            adapter.update(accept_stat);
            self.warmup_remaining -= 1;
            self.step_size = if self.warmup_remaining == 0 {
                adapter.frozen_step()
            } else {
                adapter.adapting_step()
            };
        }
        self.steps += 1;
        self.accept_stat_sum += accept_stat;
        Ok(NutsStepInfo {
            accept_stat,
            depth,
            divergent,
            leapfrogs,
            step_size: step,
        })
    }

    /// Runs warmup (unrecorded) followed by recorded steps per `stop`.
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, stop: StopRule) -> Result<SampleBatch> {
        let start = self.target.solve_snapshot().unwrap_or((0, 0));
        let mut samples = Vec::new();
        let mut accept_sum = 0.0;
        let mut steps = 0u64;
        while !stop.done(steps, solves_since(&self.target, start)) {
            let info = self.step(rng)?;
            accept_sum += info.accept_stat;
            steps += 1;
            samples.push(self.position.clone());
        }
        let (fwd, inv) = solves_consumed(&self.target, start);
        Ok(SampleBatch {
            samples,
            steps,
            accepted: steps, // every NUTS step moves within its trajectory
            acceptance_rate: if steps == 0 { f64::NAN } else { accept_sum / steps as f64 },
            forward_solves: fwd,
            inverse_solves: inv,
        })
    }
}

pub(crate) fn solves_since<T: LogTarget>(target: &T, start: (u64, u64)) -> u64 {
    let (f, i) = solves_consumed(target, start);
    f + i
}

pub(crate) fn solves_consumed<T: LogTarget>(target: &T, start: (u64, u64)) -> (u64, u64) {
    match target.solve_snapshot() {
        Some((f, i)) => (f - start.0, i - start.1),
        None => (0, 0),
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::super::targets::FnTarget;
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn standard_normal_target(d: usize) -> FnTarget<impl FnMut(&DVector<f64>) -> (f64, DVector<f64>)> {
        FnTarget::new(d, |x: &DVector<f64>| (-0.5 * x.norm_squared(), -x))
    }

    #[test]
    fn recovers_standard_normal_moments() {
        let mut chain = NutsChain::new(
            standard_normal_target(4),
            DVector::zeros(4),
            200,
            NutsOptions::default(),
        )
        .expect("valid chain");
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let batch = chain
            .run(&mut rng, StopRule::Steps(4000))
            .expect("run succeeds");
        let n = batch.samples.len() as f64;
        let mean = batch.samples.iter().sum::<DVector<f64>>() / n;
        let second: f64 = batch
            .samples
            .iter()
            .map(|x| x.norm_squared())
            .sum::<f64>()
            / n;
        assert!(mean.norm() < 0.12, "mean {mean}");
        assert_relative_eq!(second / 4.0, 1.0, max_relative = 0.1);
        assert!(batch.acceptance_rate > 0.5);
    }

    #[test]
    fn recovers_correlated_gaussian_moments() {
        // Precision matrix of an AR(1)-like pair structure.
        let cov = DMatrix::from_vec(2, 2, vec![1.0, 0.9, 0.9, 1.0]);
        let prec = cov.clone().try_inverse().expect("invertible");
        let p = prec.clone();
        let target = FnTarget::new(2, move |x: &DVector<f64>| {
            let g = -(&p * x);
            (0.5 * x.dot(&g), g)
        });
        let mut chain =
            NutsChain::new(target, DVector::zeros(2), 300, NutsOptions::default())
                .expect("valid chain");
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let batch = chain
            .run(&mut rng, StopRule::Steps(6000))
            .expect("run succeeds");
        let n = batch.samples.len() as f64;
        let mut cross = 0.0;
        let mut var0 = 0.0;
        for x in &batch.samples {
            cross += x[0] * x[1];
            var0 += x[0] * x[0];
        }
        assert_relative_eq!(var0 / n, 1.0, max_relative = 0.15);
        assert_relative_eq!(cross / n, 0.9, max_relative = 0.15);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let run = || {
            let mut chain = NutsChain::new(
                standard_normal_target(3),
                DVector::zeros(3),
                50,
                NutsOptions::default(),
            )
            .expect("valid chain");
            let mut rng = ChaCha20Rng::seed_from_u64(7);
            chain
                .run(&mut rng, StopRule::Steps(100))
                .expect("run succeeds")
                .samples
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y, "sample streams diverged");
        }
    }

    #[test]
    fn dual_averaging_targets_acceptance() {
        let mut chain = NutsChain::new(
            standard_normal_target(10),
            DVector::zeros(10),
            400,
            NutsOptions::default(),
        )
        .expect("valid chain");
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        for _ in 0..400 {
            chain.step(&mut rng).expect("step succeeds");
        }
        let mut post_warmup = 0.0;
        let n = 400;
        for _ in 0..n {
            post_warmup += chain.step(&mut rng).expect("step succeeds").accept_stat;
        }
        let mean = post_warmup / n as f64;
        assert!(
            (mean - 0.8).abs() < 0.12,
            "post-warmup acceptance {mean} far from target"
        );
    }

    #[test]
    fn log_add_exp_handles_extremes() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(log_add_exp(2.5, f64::NEG_INFINITY), 2.5);
        assert_relative_eq!(
            log_add_exp(0.0, 0.0),
            (2.0f64).ln(),
            epsilon = 1e-14
        );
    }
}
