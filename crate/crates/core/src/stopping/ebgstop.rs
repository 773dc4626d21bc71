//! Relative-error empirical-Bernstein stopping with an absolute floor τ.
//!
//! Sampling continues while
//!     (1+ε)·LB + 2ετ < (1-ε)·UB   or   LB = 0,
//! where [LB, UB] brackets |E[g]| with probability at least 1-δ. Two exits:
//!
//! - relative width: return sign(ḡ)·((1+ε)LB + (1-ε)UB)/2;
//! - absolute band: the signed interval half-width fell to ετ, return its
//!   midpoint. This is what makes zero/near-zero means terminate at all.
//!
//! With τ = 0 the rule reduces to plain relative-error stopping.

use crate::env::{Environment, RngStream, State};
use crate::policy::Policy;
use crate::rollout::TruncationPlan;

use super::{
    bernstein_radius, EstimateResult, GeometricSchedule, ReturnSource, RolloutSource,
    StoppingConfig, StoppingError, TerminationCase, WelfordAccumulator,
};

/// Interval snapshot handed to progress observers at schedule checkpoints.
#[derive(Debug, Clone, Copy)]
pub struct StoppingProgress {
    pub samples: u64,
    pub mean: f64,
    pub lb: f64,
    pub ub: f64,
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Core loop over an arbitrary return stream. Exposed so tests can feed
/// analytic distributions and the oracle comparison can replay batches.
pub fn ebgstop_tau_from_source(
    source: &mut dyn ReturnSource,
    cfg: &StoppingConfig,
    rng: &mut RngStream,
) -> Result<EstimateResult, StoppingError> {
    ebgstop_core(source, cfg, rng, &mut |_| {})
}

/// Same as [`ebgstop_tau_from_source`] with a checkpoint observer.
pub fn ebgstop_tau_observed(
    source: &mut dyn ReturnSource,
    cfg: &StoppingConfig,
    rng: &mut RngStream,
    observer: &mut dyn FnMut(&StoppingProgress),
) -> Result<EstimateResult, StoppingError> {
    ebgstop_core(source, cfg, rng, observer)
}

fn ebgstop_core(
    source: &mut dyn ReturnSource,
    cfg: &StoppingConfig,
    rng: &mut RngStream,
    observer: &mut dyn FnMut(&StoppingProgress),
) -> Result<EstimateResult, StoppingError> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let tau = cfg.tau;

    let mut acc = WelfordAccumulator::new();
    let mut sched = GeometricSchedule::new(cfg.delta);
    let mut lb: f64 = 0.0;
    let mut ub: f64 = f64::INFINITY;
    let mut signed_lb = f64::NEG_INFINITY;
    let mut signed_ub = f64::INFINITY;
    let mut env_steps: u64 = 0;

    loop {
        let keep_sampling = (1.0 + eps) * lb + 2.0 * eps * tau < (1.0 - eps) * ub || lb == 0.0;
        if !keep_sampling {
            let value = 0.5 * sign(acc.mean()) * ((1.0 + eps) * lb + (1.0 - eps) * ub);
            return Ok(EstimateResult {
                value,
                samples_used: acc.count(),
                termination: TerminationCase::RelativeWidth,
                env_steps,
            });
        }
        if acc.count() >= cfg.max_samples {
            return Err(StoppingError::SampleBudgetExceeded {
                samples: acc.count(),
                mean: acc.mean(),
                lb,
                ub,
                env_steps,
            });
        }

        let sample = source.next_return(rng)?;
        acc.update(sample.value);
        env_steps += sample.env_steps;
        let j = acc.count();
        let advanced = sched.observe(j);
        let c_j = bernstein_radius(acc.sigma(), sched.x(), j, cfg.v_max);

        lb = lb.max(acc.mean().abs() - c_j);
        ub = ub.min(acc.mean().abs() + c_j);
        signed_lb = signed_lb.max(acc.mean() - c_j);
        signed_ub = signed_ub.min(acc.mean() + c_j);

        if advanced {
            observer(&StoppingProgress { samples: j, mean: acc.mean(), lb, ub });
        }

        if 0.5 * (signed_ub - signed_lb) <= eps * tau {
            return Ok(EstimateResult {
                value: 0.5 * (signed_ub + signed_lb),
                samples_used: j,
                termination: TerminationCase::AbsoluteTau,
                env_steps,
            });
        }
    }
}

/// High-confidence Monte-Carlo estimate of the expected return from `state`:
/// with probability at least 1-δ the result v̄ satisfies
/// |v̄*(s) - v̄| <= ε(|v̄*(s)| + τ), where v̄*(s) is the truncated-return mean.
///
/// A terminal input state short-circuits to value 0 without sampling.
pub fn ebgstop_tau(
    env: &dyn Environment,
    policy: &dyn Policy,
    state: &State,
    cfg: &StoppingConfig,
    plan: &TruncationPlan,
    rng: &mut RngStream,
) -> Result<EstimateResult, StoppingError> {
    if state.is_terminal() {
        return Ok(EstimateResult {
            value: 0.0,
            samples_used: 0,
            termination: TerminationCase::TerminalState,
            env_steps: 0,
        });
    }
    let mut source = RolloutSource::new(env, policy, state, plan);
    ebgstop_tau_from_source(&mut source, cfg, rng)
}
