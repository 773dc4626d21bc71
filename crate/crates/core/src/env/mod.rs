//! MDP simulation substrate: environment trait, state/seed types, and the
//! built-in environments.
//!
//! All environments are immutable after construction and safe to share across
//! threads; every piece of mutable sampling state lives in a per-worker
//! [`RngStream`].

mod chain;
mod mountain_car;
mod puddle_world;
mod synthetic;

pub use chain::{chain_true_values, ChainEnv, ChainKind, ACTION_LEFT, ACTION_RIGHT};
pub use mountain_car::MountainCar;
pub use puddle_world::PuddleWorld;
pub use synthetic::{ReturnDistribution, SyntheticEnv};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Stream index reserved for sampling initial states, kept away from the
/// per-state rollout streams (which use the state id itself).
pub const STATE_SAMPLER_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot step from a terminal state")]
    TerminalStep,
    #[error("action {action} out of range (environment has {count} actions)")]
    InvalidAction { action: usize, count: usize },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("value solve failed: {0}")]
    SingularSystem(String),
}

/// Static description of an environment: dimensions, bound constants and
/// episode structure. `r_max` bounds |R(s,a,s')| for every transition and
/// `v_max` bounds the absolute value of any sampled return.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_count: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub v_max: f64,
    pub episodic: bool,
    pub max_episode_steps: u32,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.state_dim == 0 || self.action_count == 0 || self.max_episode_steps == 0 {
            return Err(EnvError::InvalidSpec(
                "state_dim, action_count and max_episode_steps must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(EnvError::InvalidSpec(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.r_max < 0.0 || self.v_max < 0.0 {
            return Err(EnvError::InvalidSpec("r_max and v_max must be nonnegative".into()));
        }
        // The return bound must be consistent with the reward bound.
        if self.gamma < 1.0 {
            let horizon_bound = self.r_max / (1.0 - self.gamma);
            if self.v_max > horizon_bound + 1e-12 {
                return Err(EnvError::InvalidSpec(format!(
                    "v_max {} exceeds r_max/(1-gamma) = {}",
                    self.v_max, horizon_bound
                )));
            }
        } else if self.episodic {
            let episode_bound = self.r_max * f64::from(self.max_episode_steps);
            if self.v_max > episode_bound + 1e-12 {
                return Err(EnvError::InvalidSpec(format!(
                    "v_max {} exceeds r_max * max_episode_steps = {}",
                    self.v_max, episode_bound
                )));
            }
        }
        Ok(())
    }
}

/// A point in the state space plus episode bookkeeping. `steps` counts
/// transitions since the episode started so episodic tasks can enforce their
/// step cap; terminal states have value 0 by definition.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    coords: Vec<f64>,
    steps: u32,
    terminal: bool,
}

impl State {
    pub fn new(coords: Vec<f64>) -> Self {
        State { coords, steps: 0, terminal: false }
    }

    pub fn terminal(coords: Vec<f64>) -> Self {
        State { coords, steps: 0, terminal: true }
    }

    pub(crate) fn successor(coords: Vec<f64>, prev: &State, terminal: bool) -> Self {
        State { coords, steps: prev.steps + 1, terminal }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

/// Seeded, stream-indexed random source. Distinct `(seed, stream)` pairs give
/// statistically independent sequences; the same pair reproduces the identical
/// sequence, which is what makes parallel cache builds deterministic.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// A simulatable MDP under a fixed state distribution `d` (uniform over the
/// environment's state box unless the environment overrides it).
pub trait Environment: Send + Sync {
    /// Stable identifier recorded in cache metadata.
    fn id(&self) -> &str;

    fn spec(&self) -> &EnvSpec;

    /// Draw one initial state from the configured state distribution `d`.
    fn sample_initial_state(&self, rng: &mut RngStream) -> State;

    /// Simulate one transition. Stepping from a terminal state or with an
    /// out-of-range action is a contract violation, not a silent reset.
    fn step(&self, s: &State, action: usize, rng: &mut RngStream) -> Result<(State, f64), EnvError>;
}

/// Draw `m` i.i.d. states from the environment's state distribution.
pub fn sample_initial_states(
    env: &dyn Environment,
    m: usize,
    rng: &mut RngStream,
) -> Vec<State> {
    (0..m).map(|_| env.sample_initial_state(rng)).collect()
}

pub(crate) fn check_action(spec: &EnvSpec, action: usize) -> Result<(), EnvError> {
    if action >= spec.action_count {
        return Err(EnvError::InvalidAction { action, count: spec.action_count });
    }
    Ok(())
}

pub(crate) fn uniform_in(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
