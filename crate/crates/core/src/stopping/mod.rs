//! Adaptive sampling rules that turn streams of sampled returns into
//! (ε, δ, τ)-accurate value estimates.
//!
//! `ebgstop` implements the relative-error empirical-Bernstein stopping rule,
//! `fixed_budget` the one-sample-per-state loop for clipped/sub-exponential
//! losses, and `bootstrap` the resampled-percentile interval used as an
//! idealised lower bound on sample counts.

mod bootstrap;
mod ebgstop;
mod fixed_budget;

pub use bootstrap::{bootstrap_interval, bootstrap_stop, BootstrapStopConfig};
pub use ebgstop::{ebgstop_tau, ebgstop_tau_from_source, ebgstop_tau_observed, StoppingProgress};
pub use fixed_budget::{fixed_budget_bernstein, FixedBudgetConfig, FixedBudgetResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Environment, RngStream, State};
use crate::policy::Policy;
use crate::rollout::{sample_return, RolloutError, SampledReturn, TruncationPlan};

#[derive(Debug, Error)]
pub enum StoppingError {
    #[error("invalid stopping configuration: {0}")]
    InvalidConfig(String),
    #[error("sample budget exceeded after {samples} samples (mean {mean}, interval [{lb}, {ub}] on |mean|)")]
    SampleBudgetExceeded { samples: u64, mean: f64, lb: f64, ub: f64, env_steps: u64 },
    #[error("pre-drawn batch exhausted after {consumed} samples without stopping")]
    BatchExhausted { consumed: u64 },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// Knobs shared by the adaptive stopping runs. `v_max` must upper-bound the
/// absolute value of every sampled return fed to the rule.
#[derive(Debug, Clone, Copy)]
pub struct StoppingConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub v_max: f64,
    /// Hard per-state ceiling; relative-only runs on a zero-mean problem
    /// would otherwise never terminate.
    pub max_samples: u64,
}

pub const DEFAULT_MAX_SAMPLES: u64 = 100_000_000;

impl StoppingConfig {
    pub fn new(epsilon: f64, delta: f64, tau: f64, v_max: f64) -> Self {
        StoppingConfig { epsilon, delta, tau, v_max, max_samples: DEFAULT_MAX_SAMPLES }
    }

    pub fn with_max_samples(mut self, max_samples: u64) -> Self {
        self.max_samples = max_samples;
        self
    }

    pub fn validate(&self) -> Result<(), StoppingError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(StoppingError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(StoppingError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.tau < 0.0 {
            return Err(StoppingError::InvalidConfig(format!(
                "tau must be nonnegative, got {}",
                self.tau
            )));
        }
        if self.v_max < 0.0 || !self.v_max.is_finite() {
            return Err(StoppingError::InvalidConfig(format!(
                "v_max must be finite and nonnegative, got {}",
                self.v_max
            )));
        }
        if self.max_samples == 0 {
            return Err(StoppingError::InvalidConfig("max_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Which exit closed a stopping run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationCase {
    /// The relative-width condition (1+ε)LB + 2ετ >= (1-ε)UB closed with LB > 0.
    RelativeWidth,
    /// The signed interval shrank to half-width <= ετ.
    AbsoluteTau,
    /// Fixed-budget loop: the mean Bernstein radius reached its target.
    FixedBudget,
    /// The queried state was terminal; its value is 0 by definition.
    TerminalState,
}

impl TerminationCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationCase::RelativeWidth => "relative-width",
            TerminationCase::AbsoluteTau => "absolute-tau",
            TerminationCase::FixedBudget => "fixed-budget",
            TerminationCase::TerminalState => "terminal-state",
        }
    }
}

/// Outcome of a stopping run on one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub value: f64,
    pub samples_used: u64,
    pub termination: TerminationCase,
    /// Total environment transitions consumed while sampling.
    pub env_steps: u64,
}

/// Numerically stable running mean and sum of squared deviations.
/// After j samples, `mean` is the sample mean and `m2 / j` the biased variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct WelfordAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl WelfordAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the running mean.
    pub fn sum_sq_dev(&self) -> f64 {
        self.m2
    }

    pub fn biased_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    /// sigma = sqrt(M / j), the biased standard deviation the Bernstein
    /// radius is defined over.
    pub fn sigma(&self) -> f64 {
        self.biased_variance().sqrt()
    }
}

/// Empirical Bernstein half-width: sigma * sqrt(2x/j) + 3 * v_max * x / j.
pub fn bernstein_radius(sigma: f64, x: f64, j: u64, v_max: f64) -> f64 {
    debug_assert!(j >= 1);
    let jf = j as f64;
    sigma * (2.0 * x / jf).sqrt() + 3.0 * v_max * x / jf
}

/// The log term of the confidence schedule at checkpoint h:
/// x = -alpha * ln(delta * (p - 1) / (scale * p * h^p)).
///
/// `scale` is 3 for the per-state rule and 6m for the fixed-budget loop.
pub fn confidence_x(alpha: f64, delta: f64, h: u32, p: f64, scale: f64) -> f64 {
    debug_assert!(h >= 1, "the schedule term is only meaningful for h >= 1");
    let arg = delta * (p - 1.0) / (scale * p * f64::from(h).powf(p));
    debug_assert!(arg < 1.0, "confidence term argument {arg} must stay below 1");
    let x = -alpha * arg.ln();
    debug_assert!(x > 0.0);
    x
}

/// Geometric checking schedule: the confidence term x is recomputed only when
/// the sample count crosses a threshold floor(beta^h).
///
/// floor(1.1^h) repeats small values for consecutive h; those duplicates are
/// collapsed so each sample count triggers at most one recomputation, and the
/// term is only ever evaluated for h >= 1.
#[derive(Debug, Clone)]
pub struct GeometricSchedule {
    beta: f64,
    p: f64,
    delta: f64,
    scale: f64,
    h: u32,
    alpha: f64,
    x: f64,
}

impl GeometricSchedule {
    pub const BETA: f64 = 1.1;
    pub const P: f64 = 1.1;

    pub fn new(delta: f64) -> Self {
        Self::with_scale(delta, 3.0)
    }

    pub fn with_scale(delta: f64, scale: f64) -> Self {
        assert!(delta > 0.0 && delta < 1.0);
        assert!(scale > 0.0);
        GeometricSchedule {
            beta: Self::BETA,
            p: Self::P,
            delta,
            scale,
            h: 0,
            alpha: 1.0,
            x: 1.0,
        }
    }

    fn threshold(&self, h: u32) -> u64 {
        self.beta.powi(h as i32).floor() as u64
    }

    /// Next sample count at which the schedule will advance.
    pub fn next_checkpoint(&self) -> u64 {
        self.threshold(self.h)
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current confidence term; only meaningful once `observe` has been
    /// called at least once (the first sample always crosses h = 0).
    pub fn x(&self) -> f64 {
        self.x
    }

    /// Advance past every threshold at or below `j`. Returns true when the
    /// confidence term was recomputed.
    pub fn observe(&mut self, j: u64) -> bool {
        if j < self.threshold(self.h) {
            return false;
        }
        while j >= self.threshold(self.h) {
            self.h += 1;
        }
        let t_new = self.threshold(self.h) as f64;
        let t_prev = self.threshold(self.h - 1) as f64;
        self.alpha = t_new / t_prev;
        self.x = confidence_x(self.alpha, self.delta, self.h, self.p, self.scale);
        true
    }
}

/// Stream of sampled returns consumed by a stopping rule.
pub trait ReturnSource {
    fn next_return(&mut self, rng: &mut RngStream) -> Result<SampledReturn, StoppingError>;
}

/// Fresh rollouts from a fixed state under a truncation plan.
pub struct RolloutSource<'a> {
    env: &'a dyn Environment,
    policy: &'a dyn Policy,
    state: &'a State,
    plan: &'a TruncationPlan,
}

impl<'a> RolloutSource<'a> {
    pub fn new(
        env: &'a dyn Environment,
        policy: &'a dyn Policy,
        state: &'a State,
        plan: &'a TruncationPlan,
    ) -> Self {
        RolloutSource { env, policy, state, plan }
    }
}

impl ReturnSource for RolloutSource<'_> {
    fn next_return(&mut self, rng: &mut RngStream) -> Result<SampledReturn, StoppingError> {
        Ok(sample_return(self.env, self.policy, self.state, self.plan, rng)?)
    }
}

/// Sequential replay of a pre-drawn batch of returns.
pub struct SliceSource<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> SliceSource<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        SliceSource { data, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl ReturnSource for SliceSource<'_> {
    fn next_return(&mut self, _rng: &mut RngStream) -> Result<SampledReturn, StoppingError> {
        let Some(&value) = self.data.get(self.pos) else {
            return Err(StoppingError::BatchExhausted { consumed: self.pos as u64 });
        };
        self.pos += 1;
        Ok(SampledReturn { value, env_steps: 0 })
    }
}
