//! One-step environments with analytically known return distributions.
//!
//! These drive the stopping-rule coverage experiments and the
//! bootstrap-oracle comparison, where the exact mean must be known.

use rand::Rng;

use super::{check_action, EnvError, EnvSpec, Environment, RngStream, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReturnDistribution {
    Constant(f64),
    /// Return 1 with probability p, else 0.
    Bernoulli(f64),
    Uniform(f64, f64),
}

impl ReturnDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ReturnDistribution::Constant(v) => v,
            ReturnDistribution::Bernoulli(p) => p,
            ReturnDistribution::Uniform(lo, hi) => 0.5 * (lo + hi),
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            ReturnDistribution::Constant(v) => v.abs(),
            ReturnDistribution::Bernoulli(_) => 1.0,
            ReturnDistribution::Uniform(lo, hi) => lo.abs().max(hi.abs()),
        }
    }

    fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            ReturnDistribution::Constant(v) => v,
            ReturnDistribution::Bernoulli(p) => {
                if rng.random_range(0.0..1.0) < p {
                    1.0
                } else {
                    0.0
                }
            }
            ReturnDistribution::Uniform(lo, hi) => rng.random_range(lo..hi),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ReturnDistribution::Constant(_) => "constant",
            ReturnDistribution::Bernoulli(_) => "bernoulli",
            ReturnDistribution::Uniform(..) => "uniform",
        }
    }
}

/// Single non-terminal state, one action, one transition into the terminal
/// state paying a reward drawn from the configured distribution.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    dist: ReturnDistribution,
    spec: EnvSpec,
}

impl SyntheticEnv {
    pub fn new(dist: ReturnDistribution) -> Result<Self, EnvError> {
        match dist {
            ReturnDistribution::Bernoulli(p) if !(0.0..=1.0).contains(&p) => {
                return Err(EnvError::InvalidSpec(format!("Bernoulli p {p} outside [0, 1]")));
            }
            ReturnDistribution::Uniform(lo, hi) if lo >= hi => {
                return Err(EnvError::InvalidSpec(format!("uniform bounds [{lo}, {hi}) are empty")));
            }
            _ => {}
        }
        let bound = dist.bound();
        let spec = EnvSpec {
            state_dim: 1,
            action_count: 1,
            gamma: 1.0,
            r_max: bound,
            v_max: bound,
            episodic: true,
            max_episode_steps: 1,
        };
        spec.validate()?;
        Ok(SyntheticEnv { dist, spec })
    }

    pub fn distribution(&self) -> ReturnDistribution {
        self.dist
    }

    /// The exact expected return, i.e. the true value of the start state.
    pub fn true_value(&self) -> f64 {
        self.dist.mean()
    }

    pub fn start_state(&self) -> State {
        State::new(vec![0.0])
    }
}

impl Environment for SyntheticEnv {
    fn id(&self) -> &str {
        self.dist.id()
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial_state(&self, _rng: &mut RngStream) -> State {
        self.start_state()
    }

    fn step(&self, s: &State, action: usize, rng: &mut RngStream) -> Result<(State, f64), EnvError> {
        if s.is_terminal() {
            return Err(EnvError::TerminalStep);
        }
        check_action(&self.spec, action)?;
        let reward = self.dist.sample(rng);
        debug_assert!(reward.abs() <= self.spec.r_max + 1e-15);
        Ok((State::successor(vec![1.0], s, true), reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_mean_matches_frequency() {
        let env = SyntheticEnv::new(ReturnDistribution::Bernoulli(0.3)).unwrap();
        let mut rng = RngStream::new(21, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (_, r) = env.step(&env.start_state(), 0, &mut rng).unwrap();
            sum += r;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.3).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(SyntheticEnv::new(ReturnDistribution::Bernoulli(1.5)).is_err());
        assert!(SyntheticEnv::new(ReturnDistribution::Uniform(1.0, 0.0)).is_err());
    }

    #[test]
    fn episode_is_one_step() {
        let env = SyntheticEnv::new(ReturnDistribution::Constant(2.5)).unwrap();
        let mut rng = RngStream::new(0, 0);
        let (next, r) = env.step(&env.start_state(), 0, &mut rng).unwrap();
        assert!(next.is_terminal());
        assert_eq!(r, 2.5);
    }
}
