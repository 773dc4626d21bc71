//! Fixed-state-budget estimator for clipped and sub-exponential losses: one
//! sample per state per round until the mean empirical-Bernstein radius drops
//! to the slack left over after the state-subsampling term.

use crate::env::{Environment, RngStream, State};
use crate::loss::{hoeffding_term, LossKind, LossSpec, ReturnRange};
use crate::policy::Policy;
use crate::rollout::{sample_return, TruncationMode, TruncationPlan};

use super::{
    bernstein_radius, GeometricSchedule, StoppingError, WelfordAccumulator, DEFAULT_MAX_SAMPLES,
};

#[derive(Debug, Clone)]
pub struct FixedBudgetConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub k_budget: u64,
    pub loss: LossSpec,
    /// Ceiling on rounds (= samples per state).
    pub max_rounds: u64,
}

impl FixedBudgetConfig {
    pub fn new(epsilon: f64, delta: f64, k_budget: u64, loss: LossSpec) -> Self {
        FixedBudgetConfig { epsilon, delta, k_budget, loss, max_rounds: DEFAULT_MAX_SAMPLES }
    }
}

#[derive(Debug, Clone)]
pub struct FixedBudgetResult {
    pub values: Vec<f64>,
    /// Final per-state biased standard deviations of the sampled returns.
    pub sigmas: Vec<f64>,
    /// Samples drawn per state.
    pub rounds: u64,
    /// The radius target the loop stopped against
    /// (epsilon - concentration - truncation bias).
    pub zeta: f64,
    /// Range bound used inside the Bernstein radius (squared for the
    /// squared-loss kinds).
    pub radius_bound: f64,
    /// State-subsampling term (Hoeffding or sub-exponential).
    pub concentration_term: f64,
    /// Rollout-truncation term charged against the budget (squared for the
    /// squared-loss kinds; 0 for episodic rollouts).
    pub truncation_bias: f64,
    pub env_steps: u64,
}

/// Bernstein range substitution for the loss kind: the plain return range for
/// absolute-error kinds, its square for squared-error kinds.
pub(crate) fn radius_bound_for(kind: LossKind, range: &ReturnRange) -> f64 {
    let w = range.width();
    if kind.is_squared() {
        w * w
    } else {
        w
    }
}

pub(crate) fn bias_term_for(kind: LossKind, range: &ReturnRange) -> f64 {
    let b = range.truncation_bias();
    if kind.is_squared() {
        b * b
    } else {
        b
    }
}

pub(crate) fn return_range(env: &dyn Environment, plan: &TruncationPlan) -> ReturnRange {
    match plan.mode {
        TruncationMode::Discounted { length } => {
            ReturnRange::Discounted { r_max: plan.r_max, gamma: plan.gamma, l: length }
        }
        TruncationMode::Episodic => ReturnRange::Episodic { v_max: env.spec().v_max },
    }
}

/// Slack available for the per-state radii once the state-subsampling term
/// and the truncation bias are paid. An answer <= 0 means m is too small for
/// the requested epsilon.
pub(crate) fn zeta_target(
    cfg: &FixedBudgetConfig,
    range: &ReturnRange,
    m: u64,
) -> Result<(f64, f64), StoppingError> {
    let concentration = match cfg.loss.kind {
        LossKind::Cmapve => {
            return Err(StoppingError::InvalidConfig(
                "the fixed-budget estimator certifies CMAVE/CMSVE/MAVE/MSVE, not CMAPVE".into(),
            ));
        }
        LossKind::Cmave | LossKind::Cmsve => {
            let c = cfg.loss.clip.expect("clipped spec carries c");
            hoeffding_term(cfg.delta, c, cfg.k_budget, m as f64)
        }
        LossKind::Mave | LossKind::Msve => {
            let p = cfg.loss.subexp.expect("unclipped spec carries subexp params");
            p.alpha * (2.0 * (4.0 * cfg.k_budget as f64 / cfg.delta).ln() / m as f64).sqrt()
        }
    };
    let bias = bias_term_for(cfg.loss.kind, range);
    let zeta = cfg.epsilon - concentration - bias;
    if zeta <= 0.0 {
        let hint = match cfg.loss.kind {
            LossKind::Cmave | LossKind::Cmsve => {
                let c = cfg.loss.clip.expect("clipped spec carries c");
                let slack = cfg.epsilon - bias;
                if slack > 0.0 {
                    let m_min = ((4.0 * cfg.k_budget as f64 / cfg.delta).ln() * c * c
                        / (2.0 * slack * slack))
                        .ceil();
                    format!("need m > {m_min} for epsilon {}", cfg.epsilon)
                } else {
                    format!("truncation bias {bias} alone exceeds epsilon {}", cfg.epsilon)
                }
            }
            _ => "increase epsilon or adjust the sub-exponential parameters".into(),
        };
        return Err(StoppingError::InvalidConfig(format!(
            "zeta = {} - {concentration} - {bias} = {zeta} is not positive; {hint}",
            cfg.epsilon
        )));
    }
    Ok((zeta, concentration))
}

/// Run the one-sample-per-state loop over `states`. Per-state RNG stream
/// index equals the state's position, so the loop parallelises and replays
/// deterministically.
pub fn fixed_budget_bernstein(
    env: &dyn Environment,
    policy: &dyn Policy,
    states: &[State],
    cfg: &FixedBudgetConfig,
    plan: &TruncationPlan,
    seed: u64,
) -> Result<FixedBudgetResult, StoppingError> {
    if states.is_empty() {
        return Err(StoppingError::InvalidConfig("fixed-budget run needs at least one state".into()));
    }
    let eps_ok = cfg.epsilon.is_finite() && cfg.epsilon > 0.0;
    let delta_ok = cfg.delta > 0.0 && cfg.delta < 1.0;
    if !eps_ok || !delta_ok || cfg.k_budget == 0 {
        return Err(StoppingError::InvalidConfig(format!(
            "epsilon {} must be positive, delta {} in (0,1), K {} >= 1",
            cfg.epsilon, cfg.delta, cfg.k_budget
        )));
    }
    let m = states.len() as u64;
    let range = return_range(env, plan);
    let (zeta, concentration_term) = zeta_target(cfg, &range, m)?;
    let radius_bound = radius_bound_for(cfg.loss.kind, &range);
    let truncation_bias = bias_term_for(cfg.loss.kind, &range);

    let mut accs = vec![WelfordAccumulator::new(); states.len()];
    let scale = 6.0 * m as f64;
    let mut scheds: Vec<GeometricSchedule> =
        (0..states.len()).map(|_| GeometricSchedule::with_scale(cfg.delta, scale)).collect();
    let mut rngs: Vec<RngStream> =
        (0..states.len()).map(|i| RngStream::new(seed, i as u64)).collect();
    let mut radii = vec![f64::INFINITY; states.len()];
    let mut env_steps: u64 = 0;

    let mut round: u64 = 0;
    loop {
        if round >= cfg.max_rounds {
            return Err(StoppingError::SampleBudgetExceeded {
                samples: round * m,
                mean: radii.iter().sum::<f64>() / m as f64,
                lb: zeta,
                ub: f64::INFINITY,
                env_steps,
            });
        }
        round += 1;
        for (i, state) in states.iter().enumerate() {
            let g = sample_return(env, policy, state, plan, &mut rngs[i])?;
            accs[i].update(g.value);
            env_steps += g.env_steps;
            scheds[i].observe(round);
            radii[i] = bernstein_radius(accs[i].sigma(), scheds[i].x(), round, radius_bound);
        }
        let mean_radius = radii.iter().sum::<f64>() / m as f64;
        if mean_radius <= zeta {
            break;
        }
    }

    Ok(FixedBudgetResult {
        values: accs.iter().map(|a| a.mean()).collect(),
        sigmas: accs.iter().map(|a| a.sigma()).collect(),
        rounds: round,
        zeta,
        radius_bound,
        concentration_term,
        truncation_bias,
        env_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ReturnDistribution, SyntheticEnv};
    use crate::policy::UniformPolicy;

    fn constant_env(v: f64) -> SyntheticEnv {
        SyntheticEnv::new(ReturnDistribution::Constant(v)).unwrap()
    }

    #[test]
    fn undersized_m_is_rejected_with_hint() {
        let env = constant_env(0.5);
        let policy = UniformPolicy::new(1);
        let states: Vec<_> = (0..4).map(|_| env.start_state()).collect();
        let cfg = FixedBudgetConfig::new(0.1, 0.1, 1, LossSpec::cmave(2.0).unwrap());
        let plan = TruncationPlan::episodic(0.1, 1.0, env.spec().r_max);
        let err = fixed_budget_bernstein(&env, &policy, &states, &cfg, &plan, 1);
        match err {
            Err(StoppingError::InvalidConfig(msg)) => {
                assert!(msg.contains("zeta"), "{msg}");
                assert!(msg.contains("need m >"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    /// Deterministic returns make sigma = 0, so the radius is exactly
    /// 3 * V * x(j) / j and the stopping round has a closed form.
    #[test]
    fn deterministic_rounds_match_closed_form() {
        let value = 0.5;
        let env = constant_env(value);
        let policy = UniformPolicy::new(1);
        let m = 60usize;
        let states: Vec<_> = (0..m).map(|_| env.start_state()).collect();
        let (eps, delta, k) = (0.15, 0.1, 1);
        let cfg = FixedBudgetConfig::new(eps, delta, k, LossSpec::cmave(0.5).unwrap());
        let plan = TruncationPlan::episodic(eps, 1.0, env.spec().r_max);
        let out = fixed_budget_bernstein(&env, &policy, &states, &cfg, &plan, 3).unwrap();

        // Independent re-derivation of the stopping round, including the
        // geometric checkpoint bookkeeping, written from the update rules.
        let v = 0.5f64; // episodic range = v_max of the constant env
        let c = 0.5f64;
        let zeta = eps - ((4.0 * k as f64 / delta).ln() * c * c / (2.0 * m as f64)).sqrt();
        assert!(zeta > 0.0);
        let (beta, p) = (1.1f64, 1.1f64);
        let mut h = 0u32;
        let mut expected_round = None;
        for j in 1u64..100_000 {
            while j >= beta.powi(h as i32).floor() as u64 {
                h += 1;
            }
            // h advanced at this j iff the pre-advance threshold was <= j;
            // recompute x with the final h of this sample count.
            let t_new = beta.powi(h as i32).floor();
            let t_prev = beta.powi(h as i32 - 1).floor();
            let alpha = t_new / t_prev;
            let arg = delta * (p - 1.0) / (6.0 * m as f64 * p * f64::from(h).powf(p));
            let x = -alpha * arg.ln();
            let radius = 3.0 * v * x / j as f64;
            if radius <= zeta {
                expected_round = Some(j);
                break;
            }
        }
        assert_eq!(out.rounds, expected_round.unwrap());
        assert!(out.values.iter().all(|&g| (g - value).abs() < 1e-12));
        assert!(out.sigmas.iter().all(|&s| s.abs() < 1e-12));
        assert!((out.zeta - zeta).abs() < 1e-12);
    }

    #[test]
    fn squared_loss_uses_squared_range() {
        let range = ReturnRange::Episodic { v_max: 3.0 };
        assert_eq!(radius_bound_for(LossKind::Cmave, &range), 3.0);
        assert_eq!(radius_bound_for(LossKind::Cmsve, &range), 9.0);
        let disc = ReturnRange::Discounted { r_max: 1.0, gamma: 0.9, l: 44 };
        let b = disc.truncation_bias();
        assert_eq!(bias_term_for(LossKind::Msve, &disc), b * b);
    }

    #[test]
    fn one_state_bernoulli_coverage() {
        // 200 independent builds; |v_bar - 0.5| <= zeta must fail in at most
        // a delta fraction (expected: essentially never).
        let env = SyntheticEnv::new(ReturnDistribution::Bernoulli(0.5)).unwrap();
        let policy = UniformPolicy::new(1);
        let (eps, delta) = (0.2, 0.1);
        let cfg = FixedBudgetConfig::new(eps, delta, 1, LossSpec::cmave(0.1).unwrap());
        let plan = TruncationPlan::episodic(eps, 1.0, env.spec().r_max);
        let states = vec![env.start_state()];
        let mut violations = 0;
        let trials = 200;
        for t in 0..trials {
            let out = fixed_budget_bernstein(&env, &policy, &states, &cfg, &plan, 1000 + t).unwrap();
            if (out.values[0] - 0.5).abs() > out.zeta {
                violations += 1;
            }
        }
        assert!(
            violations as f64 <= delta * trials as f64,
            "{violations}/{trials} coverage violations"
        );
    }

    #[test]
    fn cmapve_is_not_certifiable_by_fixed_budget() {
        let env = constant_env(0.5);
        let policy = UniformPolicy::new(1);
        let states = vec![env.start_state()];
        let cfg = FixedBudgetConfig::new(0.2, 0.1, 1, LossSpec::cmapve(2.0, 1.0).unwrap());
        let plan = TruncationPlan::episodic(0.2, 1.0, env.spec().r_max);
        assert!(fixed_budget_bernstein(&env, &policy, &states, &cfg, &plan, 1).is_err());
    }
}
