//! Mountain Car, classic formulation: an underpowered car in a valley must
//! build momentum to reach the goal on the right hill.

use super::{check_action, uniform_in, EnvError, EnvSpec, Environment, RngStream, State};

pub const POSITION_MIN: f64 = -1.2;
pub const POSITION_MAX: f64 = 0.6;
pub const VELOCITY_MAX: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;

const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// 3 actions {reverse, coast, forward}, reward -1 per step, episode capped at
/// 100 steps so |return| <= v_max = 100 for the undiscounted task.
#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: EnvSpec,
}

impl Default for MountainCar {
    fn default() -> Self {
        MountainCar {
            spec: EnvSpec {
                state_dim: 2,
                action_count: 3,
                gamma: 1.0,
                r_max: 1.0,
                v_max: 100.0,
                episodic: true,
                max_episode_steps: 100,
            },
        }
    }
}

impl MountainCar {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Environment for MountainCar {
    fn id(&self) -> &str {
        "mountain-car"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut RngStream) -> State {
        let position = uniform_in(rng, POSITION_MIN, POSITION_MAX);
        let velocity = uniform_in(rng, -VELOCITY_MAX, VELOCITY_MAX);
        if position >= GOAL_POSITION {
            State::terminal(vec![position, velocity])
        } else {
            State::new(vec![position, velocity])
        }
    }

    fn step(&self, s: &State, action: usize, rng: &mut RngStream) -> Result<(State, f64), EnvError> {
        let _ = rng; // dynamics are deterministic
        if s.is_terminal() {
            return Err(EnvError::TerminalStep);
        }
        check_action(&self.spec, action)?;

        let position = s.coords()[0];
        let velocity = s.coords()[1];
        let throttle = action as f64 - 1.0;
        let mut v = velocity + FORCE * throttle - GRAVITY * (3.0 * position).cos();
        v = v.clamp(-VELOCITY_MAX, VELOCITY_MAX);
        let mut p = position + v;
        p = p.clamp(POSITION_MIN, POSITION_MAX);
        if p <= POSITION_MIN && v < 0.0 {
            v = 0.0;
        }

        let reward = -1.0;
        let terminal = p >= GOAL_POSITION || s.steps() + 1 >= self.spec.max_episode_steps;
        Ok((State::successor(vec![p, v], s, terminal), reward))
    }
}
