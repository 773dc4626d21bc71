//! Fixed stochastic policies. The behaviour policy always equals the target
//! policy here; there is no off-policy correction anywhere in the crate.

use rand::Rng;
use thiserror::Error;

use crate::env::{RngStream, State};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown policy '{0}'")]
    Unknown(String),
    #[error("mixing probability must lie in [0, 1], got {0}")]
    InvalidMixing(f64),
    #[error("policy '{policy}' requires {required} actions, environment has {actual}")]
    ActionCountMismatch { policy: String, required: usize, actual: usize },
}

/// A fixed stochastic policy over a discrete action set.
///
/// `action_probabilities` exposes the exact distribution so finite MDPs can be
/// solved in closed form and so tests can check that probabilities sum to 1.
pub trait Policy: Send + Sync {
    fn id(&self) -> &str;

    fn action_count(&self) -> usize;

    fn sample_action(&self, s: &State, rng: &mut RngStream) -> usize;

    fn action_probabilities(&self, s: &State) -> Vec<f64>;
}

/// Uniform random choice over all actions.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    actions: usize,
}

impl UniformPolicy {
    pub fn new(actions: usize) -> Self {
        assert!(actions > 0);
        UniformPolicy { actions }
    }
}

impl Policy for UniformPolicy {
    fn id(&self) -> &str {
        "uniform"
    }

    fn action_count(&self) -> usize {
        self.actions
    }

    fn sample_action(&self, _s: &State, rng: &mut RngStream) -> usize {
        rng.random_range(0..self.actions)
    }

    fn action_probabilities(&self, _s: &State) -> Vec<f64> {
        vec![1.0 / self.actions as f64; self.actions]
    }
}

/// Always take the same action. Used for deterministic chains.
#[derive(Debug, Clone)]
pub struct FixedActionPolicy {
    action: usize,
    actions: usize,
}

impl FixedActionPolicy {
    pub fn new(action: usize, actions: usize) -> Self {
        assert!(action < actions);
        FixedActionPolicy { action, actions }
    }
}

impl Policy for FixedActionPolicy {
    fn id(&self) -> &str {
        "fixed"
    }

    fn action_count(&self) -> usize {
        self.actions
    }

    fn sample_action(&self, _s: &State, _rng: &mut RngStream) -> usize {
        self.action
    }

    fn action_probabilities(&self, _s: &State) -> Vec<f64> {
        let mut p = vec![0.0; self.actions];
        p[self.action] = 1.0;
        p
    }
}

/// Mountain Car energy-pumping policy: accelerate in the sign of the current
/// velocity, blended with uniform random action selection.
///
/// With mixing probability κ an action is drawn uniformly over the 3 actions,
/// otherwise the pumping action is taken. At exactly zero velocity the pumping
/// action is forward throttle.
#[derive(Debug, Clone)]
pub struct EnergyPumpingPolicy {
    mixing: f64,
}

impl EnergyPumpingPolicy {
    pub const ACTIONS: usize = 3;

    pub fn new(mixing: f64) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&mixing) {
            return Err(PolicyError::InvalidMixing(mixing));
        }
        Ok(EnergyPumpingPolicy { mixing })
    }

    pub fn mixing(&self) -> f64 {
        self.mixing
    }

    fn pumping_action(s: &State) -> usize {
        let velocity = s.coords()[1];
        if velocity < 0.0 {
            0
        } else {
            2
        }
    }
}

impl Policy for EnergyPumpingPolicy {
    fn id(&self) -> &str {
        "energy-pumping"
    }

    fn action_count(&self) -> usize {
        Self::ACTIONS
    }

    fn sample_action(&self, s: &State, rng: &mut RngStream) -> usize {
        if rng.random_range(0.0..1.0) < self.mixing {
            rng.random_range(0..Self::ACTIONS)
        } else {
            Self::pumping_action(s)
        }
    }

    fn action_probabilities(&self, s: &State) -> Vec<f64> {
        let mut p = vec![self.mixing / Self::ACTIONS as f64; Self::ACTIONS];
        p[Self::pumping_action(s)] += 1.0 - self.mixing;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RngStream;

    fn frequencies(policy: &dyn Policy, s: &State, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut counts = vec![0usize; policy.action_count()];
        for _ in 0..draws {
            counts[policy.sample_action(s, &mut rng)] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn uniform_frequencies_match_distribution() {
        let policy = UniformPolicy::new(4);
        let s = State::new(vec![0.0]);
        let freq = frequencies(&policy, &s, 100_000, 11);
        for f in freq {
            // 3 sigma for a Binomial(1e5, 0.25) proportion is ~0.0041.
            assert!((f - 0.25).abs() < 0.005, "frequency {f} too far from 0.25");
        }
    }

    #[test]
    fn energy_pumping_deterministic_limit() {
        let policy = EnergyPumpingPolicy::new(0.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let forward = State::new(vec![0.0, 0.05]);
        let backward = State::new(vec![0.0, -0.05]);
        for _ in 0..100 {
            assert_eq!(policy.sample_action(&forward, &mut rng), 2);
            assert_eq!(policy.sample_action(&backward, &mut rng), 0);
        }
    }

    #[test]
    fn energy_pumping_mixture_frequency() {
        // P(forward | v > 0) = (1 - 0.6) + 0.6/3 = 0.6.
        let policy = EnergyPumpingPolicy::new(0.6).unwrap();
        let s = State::new(vec![-0.5, 0.03]);
        let freq = frequencies(&policy, &s, 100_000, 17);
        assert!((freq[2] - 0.6).abs() < 0.006, "forward frequency {}", freq[2]);
        let probs = policy.action_probabilities(&s);
        assert!((probs[2] - 0.6).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let s = State::new(vec![0.1, -0.02]);
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(UniformPolicy::new(4)),
            Box::new(FixedActionPolicy::new(1, 2)),
            Box::new(EnergyPumpingPolicy::new(0.6).unwrap()),
        ];
        for p in &policies {
            let sum: f64 = p.action_probabilities(&s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{} sums to {sum}", p.id());
        }
    }

    #[test]
    fn mixing_out_of_range_rejected() {
        assert!(EnergyPumpingPolicy::new(1.5).is_err());
        assert!(EnergyPumpingPolicy::new(-0.1).is_err());
    }
}
