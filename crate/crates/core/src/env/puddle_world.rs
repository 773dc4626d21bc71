//! Puddle World: a unit square with noisy compass moves, a goal corner and
//! two high-cost puddles.

use rand_distr::{Distribution, StandardNormal};

use super::{check_action, uniform_in, EnvError, EnvSpec, Environment, RngStream, State};

pub const STEP_SIZE: f64 = 0.05;
pub const NOISE_SIGMA: f64 = 0.01;
pub const PUDDLE_RADIUS: f64 = 0.1;
pub const PUDDLE_PENALTY: f64 = 400.0;

/// Goal when x + y >= 1.9 (an L1 ball of radius 0.1 around the (1,1) corner).
const GOAL_L1: f64 = 1.9;

/// Worst-case per-step reward: -1 step cost minus 400 * 0.2 total penetration
/// where both puddles overlap, so |r| <= 81. The 98-step cap keeps
/// |return| <= 98 * 81 = 7938 within the declared v_max of 8000.
const MAX_STEPS: u32 = 98;
const R_MAX: f64 = 1.0 + 2.0 * PUDDLE_PENALTY * PUDDLE_RADIUS;

#[derive(Debug, Clone, Copy)]
struct Capsule {
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
}

impl Capsule {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = self.bx - self.ax;
        let dy = self.by - self.ay;
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq == 0.0 {
            0.0
        } else {
            (((x - self.ax) * dx + (y - self.ay) * dy) / len_sq).clamp(0.0, 1.0)
        };
        let px = self.ax + t * dx;
        let py = self.ay + t * dy;
        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
    }

    fn penetration(&self, x: f64, y: f64) -> f64 {
        (PUDDLE_RADIUS - self.distance(x, y)).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct PuddleWorld {
    spec: EnvSpec,
    puddles: [Capsule; 2],
}

impl Default for PuddleWorld {
    fn default() -> Self {
        PuddleWorld {
            spec: EnvSpec {
                state_dim: 2,
                action_count: 4,
                gamma: 1.0,
                r_max: R_MAX,
                v_max: 8000.0,
                episodic: true,
                max_episode_steps: MAX_STEPS,
            },
            puddles: [
                Capsule { ax: 0.10, ay: 0.75, bx: 0.45, by: 0.75 },
                Capsule { ax: 0.45, ay: 0.40, bx: 0.45, by: 0.80 },
            ],
        }
    }
}

impl PuddleWorld {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn puddle_cost(&self, x: f64, y: f64) -> f64 {
        PUDDLE_PENALTY * self.puddles.iter().map(|p| p.penetration(x, y)).sum::<f64>()
    }

    fn is_goal(x: f64, y: f64) -> bool {
        x + y >= GOAL_L1
    }
}

impl Environment for PuddleWorld {
    fn id(&self) -> &str {
        "puddle-world"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut RngStream) -> State {
        let x = uniform_in(rng, 0.0, 1.0);
        let y = uniform_in(rng, 0.0, 1.0);
        if Self::is_goal(x, y) {
            State::terminal(vec![x, y])
        } else {
            State::new(vec![x, y])
        }
    }

    fn step(&self, s: &State, action: usize, rng: &mut RngStream) -> Result<(State, f64), EnvError> {
        if s.is_terminal() {
            return Err(EnvError::TerminalStep);
        }
        check_action(&self.spec, action)?;

        let (dx, dy) = match action {
            0 => (0.0, STEP_SIZE),  // up
            1 => (0.0, -STEP_SIZE), // down
            2 => (STEP_SIZE, 0.0),  // right
            _ => (-STEP_SIZE, 0.0), // left
        };
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        let x = (s.coords()[0] + dx + NOISE_SIGMA * nx).clamp(0.0, 1.0);
        let y = (s.coords()[1] + dy + NOISE_SIGMA * ny).clamp(0.0, 1.0);

        let reward = -1.0 - self.puddle_cost(x, y);
        debug_assert!(reward.abs() <= self.spec.r_max);
        let terminal = Self::is_goal(x, y) || s.steps() + 1 >= self.spec.max_episode_steps;
        Ok((State::successor(vec![x, y], s, terminal), reward))
    }
}
