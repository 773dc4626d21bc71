//! Single-return sampling with a controlled truncation bias.
//!
//! For discounted tasks a rollout of length
//! l = ceil((log(eps*tau*(1-gamma)) - log(r_max)) / log(gamma))
//! keeps the truncation bias r_max * gamma^l / (1-gamma) below eps*tau.
//! Episodic undiscounted tasks are rolled to termination instead, which has
//! no truncation bias at all.

use thiserror::Error;

use crate::env::{EnvError, Environment, RngStream, State};
use crate::policy::Policy;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("discounted truncation requires gamma < 1 (got {0}); use episodic mode")]
    UndiscountedTruncation(f64),
    #[error("discounted truncation with r_max > 0 requires eps * tau > 0 (eps={eps}, tau={tau})")]
    TauRequired { eps: f64, tau: f64 },
    #[error("episode exceeded max_episode_steps = {max_steps} without terminating; the environment is misconfigured")]
    EpisodeOverrun { max_steps: u32 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Number of rollout steps needed so the discounted truncation bias
/// r_max * gamma^l / (1 - gamma) stays at or below eps * tau.
///
/// Returns 1 whenever a single step already suffices (r_max = 0, or
/// r_max <= eps*tau*(1-gamma)).
pub fn truncation_length(eps: f64, tau: f64, gamma: f64, r_max: f64) -> Result<u64, RolloutError> {
    assert!(eps > 0.0, "eps must be positive");
    assert!(tau >= 0.0, "tau must be nonnegative");
    assert!(r_max >= 0.0, "r_max must be nonnegative");
    if !(0.0..1.0).contains(&gamma) {
        return Err(RolloutError::UndiscountedTruncation(gamma));
    }
    if r_max == 0.0 {
        return Ok(1);
    }
    let target = eps * tau * (1.0 - gamma);
    if target <= 0.0 {
        return Err(RolloutError::TauRequired { eps, tau });
    }
    if r_max <= target {
        return Ok(1);
    }
    if gamma == 0.0 {
        return Ok(1);
    }
    let raw = (target.ln() - r_max.ln()) / gamma.ln();
    let l = raw.ceil().max(1.0) as u64;
    debug_assert!(r_max * gamma.powi(l as i32) / (1.0 - gamma) <= eps * tau * (1.0 + 1e-12));
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationMode {
    /// Accumulate discounted rewards for exactly `length` steps (or until the
    /// episode terminates earlier).
    Discounted { length: u64 },
    /// Roll to episode termination; intended for gamma = 1 episodic tasks.
    Episodic,
}

/// How a single return is sampled from a state so that the truncated-return
/// mean stays within eps*(|v*| + tau) of the true value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPlan {
    pub mode: TruncationMode,
    pub eps: f64,
    pub tau: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl TruncationPlan {
    /// Build the plan appropriate for the environment: discounted truncation
    /// for gamma < 1, episodic-to-termination otherwise.
    pub fn for_env(env: &dyn Environment, eps: f64, tau: f64) -> Result<Self, RolloutError> {
        let spec = env.spec();
        if spec.gamma < 1.0 {
            Self::discounted(eps, tau, spec.gamma, spec.r_max)
        } else if spec.episodic {
            Ok(Self::episodic(eps, tau, spec.r_max))
        } else {
            Err(RolloutError::UndiscountedTruncation(spec.gamma))
        }
    }

    pub fn discounted(eps: f64, tau: f64, gamma: f64, r_max: f64) -> Result<Self, RolloutError> {
        let length = truncation_length(eps, tau, gamma, r_max)?;
        Ok(TruncationPlan { mode: TruncationMode::Discounted { length }, eps, tau, gamma, r_max })
    }

    pub fn episodic(eps: f64, tau: f64, r_max: f64) -> Self {
        TruncationPlan { mode: TruncationMode::Episodic, eps, tau, gamma: 1.0, r_max }
    }

    /// The bias the truncated-return mean can carry relative to the true
    /// value: r_max * gamma^l / (1-gamma) in discounted mode, 0 episodic.
    pub fn truncation_bias(&self) -> f64 {
        match self.mode {
            TruncationMode::Discounted { length } => {
                if self.r_max == 0.0 {
                    0.0
                } else {
                    self.r_max * self.gamma.powi(length as i32) / (1.0 - self.gamma)
                }
            }
            TruncationMode::Episodic => 0.0,
        }
    }

    pub fn length(&self) -> Option<u64> {
        match self.mode {
            TruncationMode::Discounted { length } => Some(length),
            TruncationMode::Episodic => None,
        }
    }
}

/// One sampled (possibly truncated) return plus the environment steps it cost.
#[derive(Debug, Clone, Copy)]
pub struct SampledReturn {
    pub value: f64,
    pub env_steps: u64,
}

/// Sample a single return g = sum_k gamma^k r_{k+1} from `s` under the plan.
/// A terminal input state returns 0 immediately.
pub fn sample_return(
    env: &dyn Environment,
    policy: &dyn Policy,
    s: &State,
    plan: &TruncationPlan,
    rng: &mut RngStream,
) -> Result<SampledReturn, RolloutError> {
    if s.is_terminal() {
        return Ok(SampledReturn { value: 0.0, env_steps: 0 });
    }
    let mut g = 0.0;
    let mut discount = 1.0;
    let mut steps: u64 = 0;
    let mut state = s.clone();

    match plan.mode {
        TruncationMode::Discounted { length } => {
            for _ in 0..length {
                if state.is_terminal() {
                    break;
                }
                let action = policy.sample_action(&state, rng);
                let (next, reward) = env.step(&state, action, rng)?;
                g += discount * reward;
                discount *= plan.gamma;
                steps += 1;
                state = next;
            }
        }
        TruncationMode::Episodic => {
            let max_steps = u64::from(env.spec().max_episode_steps);
            while !state.is_terminal() {
                if steps >= max_steps {
                    return Err(RolloutError::EpisodeOverrun {
                        max_steps: env.spec().max_episode_steps,
                    });
                }
                let action = policy.sample_action(&state, rng);
                let (next, reward) = env.step(&state, action, rng)?;
                g += discount * reward;
                discount *= plan.gamma;
                steps += 1;
                state = next;
            }
        }
    }
    debug_assert!(
        g.abs() <= env.spec().v_max * (1.0 + 1e-9),
        "sampled return {} exceeds v_max {}",
        g,
        env.spec().v_max
    );
    Ok(SampledReturn { value: g, env_steps: steps })
}
