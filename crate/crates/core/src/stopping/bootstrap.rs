//! Bootstrap percentile intervals over a pre-drawn empirical return batch.
//!
//! Not a viable estimator on its own (it needs the big batch up front); it
//! approximates the true sampling distribution of a size-j mean and therefore
//! serves as an idealised lower bound on how many samples an adaptive
//! stopping rule could possibly need.

use rand::Rng;

use crate::env::RngStream;

use super::{
    EstimateResult, GeometricSchedule, StoppingError, TerminationCase, WelfordAccumulator,
};

/// Linear-interpolated percentile of a sorted slice, q in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapInterval {
    /// Lower bound on |mean|, clamped at 0.
    pub lb: f64,
    /// Upper bound on |mean|.
    pub ub: f64,
    /// Percentile half-width around the batch mean.
    pub radius: f64,
    /// Mean of the empirical distribution.
    pub center: f64,
}

/// Resample `k` sets of size `j` from the empirical distribution, take the
/// delta_prime and (100 - delta_prime) percentiles of their means, and shrink
/// them into a (LB, UB) bracket around |mean|.
pub fn bootstrap_interval(
    samples: &[f64],
    j: usize,
    k: usize,
    delta_prime: f64,
    rng: &mut RngStream,
) -> Result<BootstrapInterval, StoppingError> {
    if samples.is_empty() {
        return Err(StoppingError::InvalidConfig("bootstrap needs a non-empty batch".into()));
    }
    if j == 0 || k == 0 {
        return Err(StoppingError::InvalidConfig(format!(
            "bootstrap set size j = {j} and set count k = {k} must be positive"
        )));
    }
    if !(0.0 < delta_prime && delta_prime < 50.0) {
        return Err(StoppingError::InvalidConfig(format!(
            "percentile delta' = {delta_prime} must lie in (0, 50)"
        )));
    }
    let center = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut means = Vec::with_capacity(k);
    for _ in 0..k {
        let mut sum = 0.0;
        for _ in 0..j {
            sum += samples[rng.random_range(0..samples.len())];
        }
        means.push(sum / j as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile(&means, delta_prime);
    let hi = percentile(&means, 100.0 - delta_prime);
    let radius = (center - lo).max(hi - center).max(0.0);
    Ok(BootstrapInterval {
        lb: (center.abs() - radius).max(0.0),
        ub: center.abs() + radius,
        radius,
        center,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapStopConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    /// Number of resampled sets per interval computation (k).
    pub resample_sets: usize,
}

impl BootstrapStopConfig {
    pub fn new(epsilon: f64, delta: f64, tau: f64) -> Self {
        BootstrapStopConfig { epsilon, delta, tau, resample_sets: 1000 }
    }

    /// The percentile parameter: delta' = 100 * delta / 2.
    pub fn delta_prime(&self) -> f64 {
        100.0 * self.delta / 2.0
    }
}

/// The same stopping loop as the empirical-Bernstein rule, except the
/// interval radius comes from bootstrap percentiles over the pre-drawn batch
/// (recomputed at the geometric checkpoints). Consumes the batch sequentially.
pub fn bootstrap_stop(
    batch: &[f64],
    cfg: &BootstrapStopConfig,
    rng: &mut RngStream,
) -> Result<EstimateResult, StoppingError> {
    if batch.is_empty() {
        return Err(StoppingError::InvalidConfig("bootstrap stopping needs a non-empty batch".into()));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) || !(cfg.delta > 0.0 && cfg.delta < 1.0) || cfg.tau < 0.0 {
        return Err(StoppingError::InvalidConfig(format!(
            "epsilon {} in (0,1), delta {} in (0,1), tau {} >= 0 required",
            cfg.epsilon, cfg.delta, cfg.tau
        )));
    }
    let eps = cfg.epsilon;
    let tau = cfg.tau;
    let delta_prime = cfg.delta_prime();

    let mut acc = WelfordAccumulator::new();
    // Reused purely for its checkpoint thresholds; the confidence term x
    // plays no role in the bootstrap radius.
    let mut sched = GeometricSchedule::new(cfg.delta);
    let mut radius = f64::INFINITY;
    let mut lb: f64 = 0.0;
    let mut ub = f64::INFINITY;
    let mut signed_lb = f64::NEG_INFINITY;
    let mut signed_ub = f64::INFINITY;

    let mut consumed = 0usize;
    loop {
        let keep_sampling = (1.0 + eps) * lb + 2.0 * eps * tau < (1.0 - eps) * ub || lb == 0.0;
        if !keep_sampling {
            let sign = if acc.mean() < 0.0 { -1.0 } else { 1.0 };
            let value = 0.5 * sign * ((1.0 + eps) * lb + (1.0 - eps) * ub);
            return Ok(EstimateResult {
                value,
                samples_used: acc.count(),
                termination: TerminationCase::RelativeWidth,
                env_steps: 0,
            });
        }
        let Some(&g) = batch.get(consumed) else {
            return Err(StoppingError::BatchExhausted { consumed: consumed as u64 });
        };
        consumed += 1;
        acc.update(g);
        let j = acc.count();
        if sched.observe(j) {
            radius = bootstrap_interval(batch, j as usize, cfg.resample_sets, delta_prime, rng)?.radius;
        }
        if radius.is_finite() {
            lb = lb.max(acc.mean().abs() - radius);
            ub = ub.min(acc.mean().abs() + radius);
            signed_lb = signed_lb.max(acc.mean() - radius);
            signed_ub = signed_ub.min(acc.mean() + radius);
        }
        if 0.5 * (signed_ub - signed_lb) <= eps * tau {
            return Ok(EstimateResult {
                value: 0.5 * (signed_ub + signed_lb),
                samples_used: j,
                termination: TerminationCase::AbsoluteTau,
                env_steps: 0,
            });
        }
    }
}
