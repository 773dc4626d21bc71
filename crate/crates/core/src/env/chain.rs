//! Finite chain MDPs with exactly solvable values, used as ground-truth
//! oracles in tests and in the `validate` command.

use nalgebra::{DMatrix, DVector};

use super::{check_action, EnvError, EnvSpec, Environment, RngStream, State};
use crate::policy::Policy;

pub const ACTION_LEFT: usize = 0;
pub const ACTION_RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    /// States 0..n-1 on a line; the last state is absorbing and entering it
    /// pays reward 1. Every other transition pays 0.
    Episodic,
    /// States on a ring with no terminal state; entering an even-indexed
    /// state pays reward 1. Reward-dense, so truncation bias is visible.
    Cyclic,
}

#[derive(Debug, Clone)]
pub struct ChainEnv {
    kind: ChainKind,
    n: usize,
    spec: EnvSpec,
}

impl ChainEnv {
    pub fn new(kind: ChainKind, n: usize, gamma: f64) -> Result<Self, EnvError> {
        if n < 2 {
            return Err(EnvError::InvalidSpec("chain needs at least 2 states".into()));
        }
        if kind == ChainKind::Cyclic && gamma >= 1.0 {
            return Err(EnvError::InvalidSpec(
                "a cyclic (non-episodic) chain requires gamma < 1".into(),
            ));
        }
        let episodic = kind == ChainKind::Episodic;
        let v_max = if gamma < 1.0 {
            match kind {
                // Single reward of 1, discounted by at least gamma^0.
                ChainKind::Episodic => 1.0,
                ChainKind::Cyclic => 1.0 / (1.0 - gamma),
            }
        } else {
            1.0
        };
        let spec = EnvSpec {
            state_dim: 1,
            action_count: 2,
            gamma,
            r_max: 1.0,
            v_max,
            episodic,
            max_episode_steps: 100_000,
        };
        spec.validate()?;
        Ok(ChainEnv { kind, n, spec })
    }

    /// Deterministic episodic chain: under the always-right policy the return
    /// from state 0 is exactly gamma^(n-2).
    pub fn episodic(n: usize, gamma: f64) -> Result<Self, EnvError> {
        Self::new(ChainKind::Episodic, n, gamma)
    }

    pub fn cyclic(n: usize, gamma: f64) -> Result<Self, EnvError> {
        Self::new(ChainKind::Cyclic, n, gamma)
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn state(&self, index: usize) -> State {
        assert!(index < self.n);
        if self.is_terminal_index(index) {
            State::terminal(vec![index as f64])
        } else {
            State::new(vec![index as f64])
        }
    }

    pub fn state_index(&self, s: &State) -> usize {
        s.coords()[0] as usize
    }

    fn is_terminal_index(&self, index: usize) -> bool {
        self.kind == ChainKind::Episodic && index == self.n - 1
    }

    fn transition(&self, index: usize, action: usize) -> usize {
        match self.kind {
            ChainKind::Episodic => match action {
                ACTION_LEFT => index.saturating_sub(1),
                _ => (index + 1).min(self.n - 1),
            },
            ChainKind::Cyclic => match action {
                ACTION_LEFT => (index + self.n - 1) % self.n,
                _ => (index + 1) % self.n,
            },
        }
    }

    fn reward(&self, _from: usize, to: usize) -> f64 {
        match self.kind {
            ChainKind::Episodic => {
                if to == self.n - 1 {
                    1.0
                } else {
                    0.0
                }
            }
            ChainKind::Cyclic => {
                if to.is_multiple_of(2) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Environment for ChainEnv {
    fn id(&self) -> &str {
        match self.kind {
            ChainKind::Episodic => "chain",
            ChainKind::Cyclic => "cyclic-chain",
        }
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut RngStream) -> State {
        use rand::Rng;
        let non_terminal = match self.kind {
            ChainKind::Episodic => self.n - 1,
            ChainKind::Cyclic => self.n,
        };
        self.state(rng.random_range(0..non_terminal))
    }

    fn step(&self, s: &State, action: usize, rng: &mut RngStream) -> Result<(State, f64), EnvError> {
        let _ = rng; // transitions are deterministic given the action
        if s.is_terminal() {
            return Err(EnvError::TerminalStep);
        }
        check_action(&self.spec, action)?;
        let index = self.state_index(s);
        let next = self.transition(index, action);
        let reward = self.reward(index, next);
        debug_assert!(reward.abs() <= self.spec.r_max);
        let terminal = self.is_terminal_index(next);
        Ok((State::successor(vec![next as f64], s, terminal), reward))
    }
}

/// Solve v = r_pi + gamma * P_pi * v exactly for a chain under a fixed policy.
///
/// Terminal states have value 0 by definition. Rejects the singular gamma = 1
/// cyclic system. The solve is a direct LU on the (at most n x n) system and
/// is used only as a ground-truth oracle, never in the estimation path.
pub fn chain_true_values(chain: &ChainEnv, policy: &dyn Policy) -> Result<Vec<f64>, EnvError> {
    let n = chain.n_states();
    let gamma = chain.spec().gamma;
    if chain.kind() == ChainKind::Cyclic && gamma >= 1.0 {
        return Err(EnvError::SingularSystem(
            "gamma = 1 on a non-episodic chain has no finite values".into(),
        ));
    }

    // Unknowns are the non-terminal states, in index order.
    let unknowns: Vec<usize> = (0..n).filter(|&i| !chain.is_terminal_index(i)).collect();
    let pos: std::collections::HashMap<usize, usize> =
        unknowns.iter().enumerate().map(|(row, &i)| (i, row)).collect();
    let k = unknowns.len();

    let mut a = DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (row, &i) in unknowns.iter().enumerate() {
        let probs = policy.action_probabilities(&chain.state(i));
        for (action, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let next = chain.transition(i, action);
            b[row] += p * chain.reward(i, next);
            if let Some(&col) = pos.get(&next) {
                a[(row, col)] -= gamma * p;
            }
        }
    }

    let solution = a
        .lu()
        .solve(&b)
        .ok_or_else(|| EnvError::SingularSystem("chain value system is singular".into()))?;

    let mut values = vec![0.0; n];
    for (row, &i) in unknowns.iter().enumerate() {
        values[i] = solution[row];
    }
    Ok(values)
}
