//! The offline value-cache artifact: build it once with per-state stopping
//! runs, persist it, and certify empirical loss estimates against it until
//! the declared query budget K runs out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{sample_initial_states, Environment, RngStream, STATE_SAMPLER_STREAM};
use crate::loss::{
    split_accuracy, hoeffding_term, required_states, subexp_required_states, LossKind, LossSpec,
    SubExpDeviation, subexp_deviation,
};
use crate::policy::Policy;
use crate::rollout::TruncationPlan;
use crate::stopping::{
    ebgstop_tau, fixed_budget_bernstein, FixedBudgetConfig, StoppingConfig, StoppingError,
    TerminationCase, DEFAULT_MAX_SAMPLES,
};

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported cache format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("cache checksum mismatch: file is corrupted")]
    ChecksumMismatch,
    #[error("malformed cache file: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid build options: {0}")]
    InvalidOptions(String),
    #[error("stopping failed on state {state_id}: {source}")]
    StateFailed { state_id: u64, source: StoppingError },
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Rollout(#[from] crate::rollout::RolloutError),
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("predictions missing for state ids: {}", format_ids(.0))]
    MissingPredictions(Vec<u64>),
    #[error("loss spec incompatible with the cache certificate: {0}")]
    IncompatibleLossSpec(String),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
}

fn format_ids(ids: &[u64]) -> String {
    const SHOW: usize = 20;
    let mut s = ids.iter().take(SHOW).map(u64::to_string).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        s.push_str(&format!(", ... ({} total)", ids.len()));
    }
    s
}

/// Everything needed to reproduce and audit a cache build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub env_id: String,
    pub policy_id: String,
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub clip: f64,
    pub k_budget: u64,
    pub gamma: f64,
    pub v_max: f64,
    pub r_max: f64,
    pub seed: u64,
    pub m: u64,
    /// Unix seconds; 0 unless the caller supplies a timestamp (keeps builds
    /// byte-identical by default).
    pub created_unix: u64,
    pub total_samples: u64,
    pub total_env_steps: u64,
    /// Loss family this cache certifies ("cmapve" for adaptive builds).
    pub certified_loss: String,
    /// Rollout truncation length, when the discounted path was used.
    pub truncation_length: Option<u64>,
    /// Present on fixed-budget builds (the per-state sample count n, the
    /// stopping target and the concentration term backing the certificate).
    pub fixed_budget: Option<FixedBudgetMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBudgetMeta {
    pub rounds: u64,
    pub zeta: f64,
    pub concentration_term: f64,
    /// Truncation term charged against the budget (0 for episodic rollouts).
    pub truncation_bias: f64,
    pub radius_bound: f64,
    pub mean_sigma: f64,
    pub subexp: Option<crate::loss::SubExpParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: u64,
    pub coords: Vec<f64>,
    pub value: f64,
    pub samples_used: u64,
    pub env_steps: u64,
    pub termination: TerminationCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheUsage {
    pub queries_consumed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCache {
    pub meta: CacheMeta,
    pub entries: Vec<CacheEntry>,
    pub usage: CacheUsage,
}

/// Per-state sample-count distribution of a finished cache.
#[derive(Debug, Clone, Serialize)]
pub struct RolloutBudgetStats {
    pub min: u64,
    pub median: u64,
    pub max: u64,
    pub total_samples: u64,
    pub total_env_steps: u64,
}

impl ValueCache {
    pub fn budget_stats(&self) -> RolloutBudgetStats {
        let mut samples: Vec<u64> = self.entries.iter().map(|e| e.samples_used).collect();
        samples.sort_unstable();
        let median = if samples.is_empty() { 0 } else { samples[samples.len() / 2] };
        RolloutBudgetStats {
            min: samples.first().copied().unwrap_or(0),
            median,
            max: samples.last().copied().unwrap_or(0),
            total_samples: self.meta.total_samples,
            total_env_steps: self.meta.total_env_steps,
        }
    }

    /// The per-entry accuracy the build certified: eps_bar = eps / (2(1+c))
    /// for adaptive builds.
    pub fn entry_epsilon(&self) -> f64 {
        split_accuracy(self.meta.epsilon, self.meta.clip).1
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub clip: f64,
    pub k_budget: u64,
    pub seed: u64,
    pub max_samples_per_state: u64,
    pub created_unix: u64,
}

impl BuildOptions {
    pub fn new(epsilon: f64, delta: f64, tau: f64, clip: f64, k_budget: u64, seed: u64) -> Self {
        BuildOptions {
            epsilon,
            delta,
            tau,
            clip,
            k_budget,
            seed,
            max_samples_per_state: DEFAULT_MAX_SAMPLES,
            created_unix: 0,
        }
    }

    fn validate(&self) -> Result<(), BuildError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BuildError::InvalidOptions(format!(
                "epsilon {} and delta {} must lie in (0, 1)",
                self.epsilon, self.delta
            )));
        }
        if self.tau < 0.0 {
            return Err(BuildError::InvalidOptions(format!("tau {} must be nonnegative", self.tau)));
        }
        if self.clip <= 0.0 {
            return Err(BuildError::InvalidOptions(format!("clip {} must be positive", self.clip)));
        }
        if self.k_budget == 0 {
            return Err(BuildError::InvalidOptions("K budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Offline cache construction: size m from the Hoeffding term at eps_m = eps/2,
/// sample m states i.i.d. from d, and estimate each state's value with the
/// stopping rule at (eps_bar = eps/(2(1+c)), delta/(2m), tau).
///
/// States run in parallel; state i always uses RNG stream i, so the result is
/// identical for any worker count.
pub fn build_cache(
    env: &dyn Environment,
    policy: &dyn Policy,
    opts: &BuildOptions,
) -> Result<ValueCache, BuildError> {
    opts.validate()?;
    let spec = env.spec();
    let (eps_m, eps_bar) = split_accuracy(opts.epsilon, opts.clip);
    let m = required_states(eps_m, opts.delta, opts.clip, opts.k_budget);

    let mut sampler = RngStream::new(opts.seed, STATE_SAMPLER_STREAM);
    let states = sample_initial_states(env, m as usize, &mut sampler);

    let plan = TruncationPlan::for_env(env, eps_bar, opts.tau)?;
    let per_state_delta = opts.delta / (2.0 * m as f64);
    let cfg = StoppingConfig::new(eps_bar, per_state_delta, opts.tau, spec.v_max)
        .with_max_samples(opts.max_samples_per_state);

    let results: Vec<Result<CacheEntry, BuildError>> = states
        .par_iter()
        .enumerate()
        .map(|(i, state)| {
            let mut rng = RngStream::new(opts.seed, i as u64);
            let est = ebgstop_tau(env, policy, state, &cfg, &plan, &mut rng)
                .map_err(|source| BuildError::StateFailed { state_id: i as u64, source })?;
            Ok(CacheEntry {
                id: i as u64,
                coords: state.coords().to_vec(),
                value: est.value,
                samples_used: est.samples_used,
                env_steps: est.env_steps,
                termination: est.termination,
            })
        })
        .collect();

    let mut entries = Vec::with_capacity(results.len());
    for r in results {
        entries.push(r?);
    }
    let total_samples = entries.iter().map(|e| e.samples_used).sum();
    let total_env_steps = entries.iter().map(|e| e.env_steps).sum();

    Ok(ValueCache {
        meta: CacheMeta {
            env_id: env.id().to_string(),
            policy_id: policy.id().to_string(),
            epsilon: opts.epsilon,
            delta: opts.delta,
            tau: opts.tau,
            clip: opts.clip,
            k_budget: opts.k_budget,
            gamma: spec.gamma,
            v_max: spec.v_max,
            r_max: spec.r_max,
            seed: opts.seed,
            m,
            created_unix: opts.created_unix,
            total_samples,
            total_env_steps,
            certified_loss: LossKind::Cmapve.as_str().to_string(),
            truncation_length: plan.length(),
            fixed_budget: None,
        },
        entries,
        usage: CacheUsage::default(),
    })
}

#[derive(Debug, Clone)]
pub struct FixedBudgetBuildOptions {
    pub epsilon: f64,
    pub delta: f64,
    pub k_budget: u64,
    pub loss: LossSpec,
    /// State count for the clipped kinds; ignored for MAVE/MSVE where m is
    /// forced to the sub-exponential formula.
    pub m: Option<u64>,
    pub seed: u64,
    pub max_rounds: u64,
    pub created_unix: u64,
}

impl FixedBudgetBuildOptions {
    pub fn new(epsilon: f64, delta: f64, k_budget: u64, loss: LossSpec, seed: u64) -> Self {
        FixedBudgetBuildOptions {
            epsilon,
            delta,
            k_budget,
            loss,
            m: None,
            seed,
            max_rounds: DEFAULT_MAX_SAMPLES,
            created_unix: 0,
        }
    }
}

/// Fixed-budget construction for the clipped/sub-exponential losses: all m
/// states advance one sample per round until the mean Bernstein radius fits
/// inside the zeta slack.
pub fn build_cache_fixed_budget(
    env: &dyn Environment,
    policy: &dyn Policy,
    opts: &FixedBudgetBuildOptions,
) -> Result<ValueCache, BuildError> {
    let spec = env.spec();
    let m = match opts.loss.kind {
        LossKind::Mave | LossKind::Msve => {
            let params = opts.loss.subexp.ok_or_else(|| {
                BuildError::InvalidOptions("unclipped losses need sub-exponential parameters".into())
            })?;
            subexp_required_states(&params, opts.k_budget, opts.delta)
        }
        _ => opts.m.ok_or_else(|| {
            BuildError::InvalidOptions("clipped fixed-budget builds need an explicit m".into())
        })?,
    };
    if m == 0 {
        return Err(BuildError::InvalidOptions("m must be at least 1".into()));
    }

    let mut sampler = RngStream::new(opts.seed, STATE_SAMPLER_STREAM);
    let states = sample_initial_states(env, m as usize, &mut sampler);

    // Discounted rollouts are truncated so the bias term consumes at most a
    // quarter of the epsilon budget (squared losses pay the bias squared),
    // leaving the rest for the concentration term and the per-state radii.
    // Episodic tasks roll to termination and pay no bias.
    let plan = if spec.gamma < 1.0 {
        let bias_target = if opts.loss.kind.is_squared() {
            (opts.epsilon / 4.0).sqrt()
        } else {
            opts.epsilon / 4.0
        };
        TruncationPlan::discounted(bias_target, 1.0, spec.gamma, spec.r_max)?
    } else {
        TruncationPlan::for_env(env, opts.epsilon, 1.0)?
    };
    let cfg = FixedBudgetConfig {
        epsilon: opts.epsilon,
        delta: opts.delta,
        k_budget: opts.k_budget,
        loss: opts.loss,
        max_rounds: opts.max_rounds,
    };
    let out = fixed_budget_bernstein(env, policy, &states, &cfg, &plan, opts.seed)?;

    let entries: Vec<CacheEntry> = states
        .iter()
        .enumerate()
        .map(|(i, state)| CacheEntry {
            id: i as u64,
            coords: state.coords().to_vec(),
            value: out.values[i],
            samples_used: out.rounds,
            env_steps: 0,
            termination: TerminationCase::FixedBudget,
        })
        .collect();
    let mean_sigma = out.sigmas.iter().sum::<f64>() / out.sigmas.len() as f64;

    Ok(ValueCache {
        meta: CacheMeta {
            env_id: env.id().to_string(),
            policy_id: policy.id().to_string(),
            epsilon: opts.epsilon,
            delta: opts.delta,
            tau: 0.0,
            clip: opts.loss.clip.unwrap_or(0.0),
            k_budget: opts.k_budget,
            gamma: spec.gamma,
            v_max: spec.v_max,
            r_max: spec.r_max,
            seed: opts.seed,
            m,
            created_unix: opts.created_unix,
            total_samples: out.rounds * m,
            total_env_steps: out.env_steps,
            certified_loss: opts.loss.kind.as_str().to_string(),
            truncation_length: plan.length(),
            fixed_budget: Some(FixedBudgetMeta {
                rounds: out.rounds,
                zeta: out.zeta,
                concentration_term: out.concentration_term,
                truncation_bias: out.truncation_bias,
                radius_bound: out.radius_bound,
                mean_sigma,
                subexp: opts.loss.subexp,
            }),
        },
        entries,
        usage: CacheUsage::default(),
    })
}

// ---------------------------------------------------------------------------
// Persistence: a self-describing JSON envelope with a payload checksum.
// ---------------------------------------------------------------------------

fn payload_checksum(payload_json: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(payload_json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_to_string(cache: &ValueCache) -> String {
    // The payload is embedded verbatim (as a raw value) so the checksum is
    // over exactly the bytes that land in the file.
    #[derive(Serialize)]
    struct EnvelopeOut<'a> {
        format_version: u32,
        checksum: String,
        payload: &'a serde_json::value::RawValue,
    }
    let payload_json = serde_json::to_string(cache).expect("cache serializes");
    let checksum = payload_checksum(&payload_json);
    let payload = serde_json::value::RawValue::from_string(payload_json).expect("valid json");
    let envelope =
        EnvelopeOut { format_version: CACHE_FORMAT_VERSION, checksum, payload: &payload };
    serde_json::to_string_pretty(&envelope).expect("envelope serializes")
}

pub fn save_cache(cache: &ValueCache, path: &Path) -> Result<(), CacheError> {
    fs::write(path, cache_to_string(cache))?;
    Ok(())
}

pub fn cache_from_str(text: &str) -> Result<ValueCache, CacheError> {
    #[derive(Deserialize)]
    struct RawEnvelope<'a> {
        format_version: u32,
        checksum: String,
        #[serde(borrow)]
        payload: &'a serde_json::value::RawValue,
    }
    let raw: RawEnvelope =
        serde_json::from_str(text).map_err(|e| CacheError::Malformed(e.to_string()))?;
    if raw.format_version != CACHE_FORMAT_VERSION {
        return Err(CacheError::UnsupportedVersion {
            found: raw.format_version,
            supported: CACHE_FORMAT_VERSION,
        });
    }
    if payload_checksum(raw.payload.get()) != raw.checksum {
        return Err(CacheError::ChecksumMismatch);
    }
    serde_json::from_str(raw.payload.get()).map_err(|e| CacheError::Malformed(e.to_string()))
}

pub fn load_cache(path: &Path) -> Result<ValueCache, CacheError> {
    cache_from_str(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Predictions keyed by cache state id.
pub type Predictions = BTreeMap<u64, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    /// Within the declared K budget.
    Valid,
    /// The K budget is exhausted; the union bound no longer covers this query.
    Voided,
    /// Read-only evaluation that did not consume budget; informational only.
    Advisory,
}

/// Deviation-bound decomposition.
///
/// For adaptive caches these are the three exact terms evaluated from the
/// cache metadata: the Hoeffding state-sampling term at the actual m, the
/// truncated-rollout term 2*eps_bar and the normaliser-shift term
/// c*(1-(1+eps_bar)^-2). The declared bound uses the builder's conservative
/// budget split, so the terms sum to at most 1.5x the declared epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BoundBreakdown {
    ThreeTerm { state_sampling: f64, rollout: f64, normalizer: f64 },
    /// concentration + zeta + truncation bias for fixed-budget caches.
    Zeta { concentration: f64, zeta: f64, truncation_bias: f64 },
}

/// An empirical loss together with its certified high-probability deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub loss_kind: String,
    pub empirical_loss: f64,
    pub deviation_bound: f64,
    pub bound_breakdown: BoundBreakdown,
    /// 1 - delta.
    pub confidence: f64,
    pub k_budget: u64,
    pub k_consumed: u64,
    pub certificate: CertificateStatus,
    pub states_evaluated: u64,
}

fn check_compatible(cache: &ValueCache, spec: &LossSpec) -> Result<(), EvaluateError> {
    if spec.kind.as_str() != cache.meta.certified_loss {
        return Err(EvaluateError::IncompatibleLossSpec(format!(
            "cache certifies {}, evaluation requested {}",
            cache.meta.certified_loss,
            spec.kind.as_str()
        )));
    }
    if let Some(c) = spec.clip {
        if (c - cache.meta.clip).abs() > 1e-12 {
            return Err(EvaluateError::IncompatibleLossSpec(format!(
                "clip {} differs from the cache's certified clip {}",
                c, cache.meta.clip
            )));
        }
    }
    if spec.kind == LossKind::Cmapve {
        let tau = spec.tau.unwrap_or(0.0);
        if (tau - cache.meta.tau).abs() > 1e-12 {
            return Err(EvaluateError::IncompatibleLossSpec(format!(
                "tau {} differs from the cache's certified tau {}",
                tau, cache.meta.tau
            )));
        }
    }
    Ok(())
}

fn deviation_bound(cache: &ValueCache) -> (f64, BoundBreakdown) {
    if let Some(fb) = &cache.meta.fixed_budget {
        // Fixed-budget certificate: concentration + zeta + bias = epsilon by
        // construction; report the declared epsilon with its decomposition.
        return (
            cache.meta.epsilon,
            BoundBreakdown::Zeta {
                concentration: fb.concentration_term,
                zeta: fb.zeta,
                truncation_bias: fb.truncation_bias,
            },
        );
    }
    // Adaptive certificate: declared epsilon, decomposed into the exact
    // three terms at the cache's actual m and per-state accuracy.
    let (_, eps_bar) = split_accuracy(cache.meta.epsilon, cache.meta.clip);
    let state_sampling =
        hoeffding_term(cache.meta.delta, cache.meta.clip, cache.meta.k_budget, cache.meta.m as f64);
    (
        cache.meta.epsilon,
        BoundBreakdown::ThreeTerm {
            state_sampling,
            rollout: 2.0 * eps_bar,
            normalizer: cache.meta.clip * (1.0 - (1.0 + eps_bar).powi(-2)),
        },
    )
}

/// Certified empirical loss of `predictions` against the cache.
///
/// Consumes one unit of the K budget unless `read_only`; a query past the
/// budget still reports, but with a voided certificate.
pub fn evaluate(
    cache: &mut ValueCache,
    predictions: &Predictions,
    spec: &LossSpec,
    read_only: bool,
) -> Result<ErrorReport, EvaluateError> {
    check_compatible(cache, spec)?;

    let missing: Vec<u64> =
        cache.entries.iter().map(|e| e.id).filter(|id| !predictions.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(EvaluateError::MissingPredictions(missing));
    }

    let pairs = cache.entries.iter().map(|e| (predictions[&e.id], e.value));
    let empirical = crate::loss::empirical_loss(pairs, spec)?;

    let certificate = if read_only {
        CertificateStatus::Advisory
    } else {
        cache.usage.queries_consumed += 1;
        if cache.usage.queries_consumed <= cache.meta.k_budget {
            CertificateStatus::Valid
        } else {
            CertificateStatus::Voided
        }
    };

    let (bound, breakdown) = deviation_bound(cache);
    Ok(ErrorReport {
        loss_kind: spec.kind.as_str().to_string(),
        empirical_loss: empirical,
        deviation_bound: bound,
        bound_breakdown: breakdown,
        confidence: 1.0 - cache.meta.delta,
        k_budget: cache.meta.k_budget,
        k_consumed: cache.usage.queries_consumed,
        certificate,
        states_evaluated: cache.entries.len() as u64,
    })
}

/// Read a predictions file: either CSV lines `state_id,value` (with an
/// optional header and `#` comments) or a JSON object/array mapping ids to
/// values.
pub fn read_predictions(path: &Path) -> Result<Predictions, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_predictions(&text)
}

pub fn parse_predictions(text: &str) -> Result<Predictions, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return parse_predictions_json(trimmed);
    }
    let mut map = Predictions::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let id_part = parts.next().unwrap_or("").trim();
        let value_part = parts.next().unwrap_or("").trim();
        if lineno == 0 && id_part.parse::<u64>().is_err() {
            continue; // header row
        }
        let id: u64 = id_part
            .parse()
            .map_err(|_| format!("line {}: bad state id '{id_part}'", lineno + 1))?;
        let value: f64 = value_part
            .parse()
            .map_err(|_| format!("line {}: bad value '{value_part}'", lineno + 1))?;
        map.insert(id, value);
    }
    Ok(map)
}

fn parse_predictions_json(text: &str) -> Result<Predictions, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut map = Predictions::new();
    match value {
        serde_json::Value::Object(obj) => {
            for (k, v) in obj {
                let id: u64 = k.parse().map_err(|_| format!("bad state id '{k}'"))?;
                let value = v.as_f64().ok_or_else(|| format!("bad value for id {id}"))?;
                map.insert(id, value);
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                let pair = item.as_array().filter(|a| a.len() == 2).ok_or("expected [id, value] pairs")?;
                let id = pair[0].as_u64().ok_or("bad state id")?;
                let value = pair[1].as_f64().ok_or("bad value")?;
                map.insert(id, value);
            }
        }
        _ => return Err("expected a JSON object or array of [id, value] pairs".into()),
    }
    Ok(map)
}

/// Convenience used by the fixed-budget report path: the sub-exponential
/// deviation the cache's m implies for its declared parameters.
pub fn cache_subexp_deviation(cache: &ValueCache, spec: &LossSpec) -> Option<SubExpDeviation> {
    let params = spec.subexp?;
    subexp_deviation(&params, cache.meta.m, cache.meta.delta, cache.meta.k_budget).ok()
}

/// Reconstruct the loss spec a cache certifies from its metadata.
pub fn certified_loss_spec(cache: &ValueCache) -> Result<LossSpec, EvaluateError> {
    let kind = LossKind::parse(&cache.meta.certified_loss)?;
    Ok(match kind {
        LossKind::Cmapve => LossSpec::cmapve(cache.meta.clip, cache.meta.tau)?,
        LossKind::Cmave => LossSpec::cmave(cache.meta.clip)?,
        LossKind::Cmsve => LossSpec::cmsve(cache.meta.clip)?,
        LossKind::Mave | LossKind::Msve => {
            let params = cache
                .meta
                .fixed_budget
                .as_ref()
                .and_then(|fb| fb.subexp)
                .ok_or_else(|| {
                    EvaluateError::IncompatibleLossSpec(
                        "cache certifies an unclipped loss but stores no sub-exponential parameters"
                            .into(),
                    )
                })?;
            if kind == LossKind::Mave {
                LossSpec::mave(params)
            } else {
                LossSpec::msve(params)
            }
        }
    })
}

/// The Hoeffding state-sampling term the cache's actual (integer) m achieves.
pub fn cache_hoeffding_term(cache: &ValueCache) -> f64 {
    hoeffding_term(cache.meta.delta, cache.meta.clip, cache.meta.k_budget, cache.meta.m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainEnv, ACTION_RIGHT};
    use crate::policy::FixedActionPolicy;

    fn small_cache() -> ValueCache {
        let chain = ChainEnv::episodic(6, 0.9).unwrap();
        let right = FixedActionPolicy::new(ACTION_RIGHT, 2);
        // Large eps keeps m tiny for unit tests.
        let opts = BuildOptions::new(0.9, 0.2, 1.0, 2.0, 1, 7);
        build_cache(&chain, &right, &opts).unwrap()
    }

    #[test]
    fn build_sizes_m_from_the_formula() {
        let cache = small_cache();
        assert_eq!(cache.meta.m, required_states(0.45, 0.2, 2.0, 1));
        assert_eq!(cache.entries.len() as u64, cache.meta.m);
        // Ids dense 0..m-1.
        for (i, e) in cache.entries.iter().enumerate() {
            assert_eq!(e.id, i as u64);
        }
    }

    #[test]
    fn deterministic_chain_values_are_tight() {
        let cache = small_cache();
        let chain = ChainEnv::episodic(6, 0.9).unwrap();
        let right = FixedActionPolicy::new(ACTION_RIGHT, 2);
        let truth = crate::env::chain_true_values(&chain, &right).unwrap();
        let eps_bar = cache.entry_epsilon();
        for e in &cache.entries {
            let idx = e.coords[0] as usize;
            let tol = eps_bar * (truth[idx].abs() + cache.meta.tau);
            assert!((e.value - truth[idx]).abs() <= tol, "entry {idx}: {} vs {}", e.value, truth[idx]);
        }
    }

    #[test]
    fn same_seed_builds_identical_caches() {
        let a = small_cache();
        let b = small_cache();
        assert_eq!(cache_to_string(&a), cache_to_string(&b));
    }

    #[test]
    fn save_load_round_trip() {
        let cache = small_cache();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.vc");
        save_cache(&cache, &path).unwrap();
        let loaded = load_cache(&path).unwrap();
        assert_eq!(cache, loaded);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let cache = small_cache();
        let mut text = cache_to_string(&cache);
        // Flip a digit inside the payload (value fields all carry digits).
        let pos = text.find("\"value\":").unwrap() + 9;
        let byte = text.as_bytes()[pos];
        let replacement = if byte == b'0' { '1' } else { '0' };
        text.replace_range(pos..pos + 1, &replacement.to_string());
        match cache_from_str(&text) {
            Err(CacheError::ChecksumMismatch) | Err(CacheError::Malformed(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let cache = small_cache();
        let text = cache_to_string(&cache).replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(
            cache_from_str(&text),
            Err(CacheError::UnsupportedVersion { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let cache = small_cache();
        let text = cache_to_string(&cache);
        let cut = &text[..text.len() / 2];
        assert!(matches!(cache_from_str(cut), Err(CacheError::Malformed(_))));
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let mut cache = small_cache();
        let preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        let spec = LossSpec::cmapve(cache.meta.clip, cache.meta.tau).unwrap();
        let report = evaluate(&mut cache, &preds, &spec, false).unwrap();
        assert_eq!(report.empirical_loss, 0.0);
        assert_eq!(report.deviation_bound, cache.meta.epsilon);
        assert_eq!(report.certificate, CertificateStatus::Valid);
        assert_eq!(report.k_consumed, 1);
        match report.bound_breakdown {
            BoundBreakdown::ThreeTerm { state_sampling, rollout, normalizer } => {
                let eps = cache.meta.epsilon;
                let eps_bar = cache.entry_epsilon();
                // Hoeffding term at the rounded-up m sits at or below eps/2.
                assert!(state_sampling <= eps / 2.0 + 1e-12);
                assert!((rollout - 2.0 * eps_bar).abs() < 1e-12);
                assert!((normalizer - 2.0 * (1.0 - (1.0 + eps_bar).powi(-2))).abs() < 1e-12);
                // The builder's split is conservative: the exact terms sum to
                // no more than 1.5x the declared bound.
                assert!(state_sampling + rollout + normalizer <= 1.5 * eps + 1e-12);
            }
            other => panic!("unexpected breakdown {other:?}"),
        }
    }

    #[test]
    fn evaluate_rejects_missing_ids() {
        let mut cache = small_cache();
        let mut preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        preds.remove(&0);
        preds.remove(&2);
        let spec = LossSpec::cmapve(cache.meta.clip, cache.meta.tau).unwrap();
        match evaluate(&mut cache, &preds, &spec, false) {
            Err(EvaluateError::MissingPredictions(ids)) => assert_eq!(ids, vec![0, 2]),
            other => panic!("expected missing-prediction error, got {other:?}"),
        }
    }

    #[test]
    fn k_budget_exhaustion_voids_the_certificate() {
        let mut cache = small_cache();
        assert_eq!(cache.meta.k_budget, 1);
        let preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        let spec = LossSpec::cmapve(cache.meta.clip, cache.meta.tau).unwrap();
        let first = evaluate(&mut cache, &preds, &spec, false).unwrap();
        assert_eq!(first.certificate, CertificateStatus::Valid);
        let second = evaluate(&mut cache, &preds, &spec, false).unwrap();
        assert_eq!(second.certificate, CertificateStatus::Voided);
        assert_eq!(second.k_consumed, 2);
    }

    #[test]
    fn read_only_mode_is_advisory_and_free() {
        let mut cache = small_cache();
        let preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        let spec = LossSpec::cmapve(cache.meta.clip, cache.meta.tau).unwrap();
        let r = evaluate(&mut cache, &preds, &spec, true).unwrap();
        assert_eq!(r.certificate, CertificateStatus::Advisory);
        assert_eq!(cache.usage.queries_consumed, 0);
    }

    #[test]
    fn incompatible_loss_spec_is_rejected() {
        let mut cache = small_cache();
        let preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        let wrong_kind = LossSpec::cmave(cache.meta.clip).unwrap();
        assert!(matches!(
            evaluate(&mut cache, &preds, &wrong_kind, false),
            Err(EvaluateError::IncompatibleLossSpec(_))
        ));
        let wrong_tau = LossSpec::cmapve(cache.meta.clip, cache.meta.tau + 1.0).unwrap();
        assert!(matches!(
            evaluate(&mut cache, &preds, &wrong_tau, false),
            Err(EvaluateError::IncompatibleLossSpec(_))
        ));
    }

    #[test]
    fn build_failure_reports_the_offending_state() {
        let chain = ChainEnv::episodic(6, 0.9).unwrap();
        let policy = crate::policy::UniformPolicy::new(2);
        let mut opts = BuildOptions::new(0.2, 0.1, 1.0, 2.0, 1, 7);
        opts.max_samples_per_state = 10; // far too few to ever stop
        match build_cache(&chain, &policy, &opts) {
            Err(BuildError::StateFailed { state_id, source }) => {
                assert!(state_id < required_states(0.1, 0.1, 2.0, 1));
                assert!(matches!(source, StoppingError::SampleBudgetExceeded { .. }));
            }
            other => panic!("expected a per-state failure, got {other:?}"),
        }
    }

    #[test]
    fn discounted_fixed_budget_bound_includes_truncation_bias() {
        use crate::env::ChainKind;
        use crate::policy::UniformPolicy;

        // Reward-dense ring: the discounted plan carries a real bias term.
        let chain = ChainEnv::new(ChainKind::Cyclic, 5, 0.9).unwrap();
        let policy = UniformPolicy::new(2);
        let loss = LossSpec::cmave(2.0).unwrap();
        let mut opts = FixedBudgetBuildOptions::new(0.6, 0.1, 1, loss, 3);
        opts.m = Some(80);
        let mut cache = build_cache_fixed_budget(&chain, &policy, &opts).unwrap();
        let fb = cache.meta.fixed_budget.clone().unwrap();
        assert!(fb.truncation_bias > 0.0);
        // The three stored terms reassemble the declared budget exactly.
        assert!(
            (fb.concentration_term + fb.zeta + fb.truncation_bias - 0.6).abs() < 1e-12
        );

        let preds: Predictions = cache.entries.iter().map(|e| (e.id, e.value)).collect();
        let report = evaluate(&mut cache, &preds, &loss, true).unwrap();
        assert_eq!(report.deviation_bound, 0.6);
        match report.bound_breakdown {
            BoundBreakdown::Zeta { concentration, zeta, truncation_bias } => {
                assert_eq!(concentration, fb.concentration_term);
                assert_eq!(zeta, fb.zeta);
                assert_eq!(truncation_bias, fb.truncation_bias);
            }
            other => panic!("unexpected breakdown {other:?}"),
        }
    }

    #[test]
    fn fixed_budget_build_sizing_examples() {
        use crate::env::{ReturnDistribution, SyntheticEnv};
        use crate::loss::{laplace_subexp_params, required_states};
        use crate::policy::UniformPolicy;

        let env = SyntheticEnv::new(ReturnDistribution::Bernoulli(0.5)).unwrap();
        let policy = UniformPolicy::new(1);

        // Twice the minimal m leaves positive slack and is accepted.
        let (eps, delta, k, clip) = (0.3, 0.1, 1u64, 0.5);
        let m = 2 * required_states(eps, delta, clip, k);
        let loss = LossSpec::cmave(clip).unwrap();
        let mut opts = FixedBudgetBuildOptions::new(eps, delta, k, loss, 11);
        opts.m = Some(m);
        let cache = build_cache_fixed_budget(&env, &policy, &opts).unwrap();
        assert_eq!(cache.meta.m, m);
        assert!(cache.meta.fixed_budget.as_ref().unwrap().zeta > 0.0);
        assert_eq!(cache.meta.certified_loss, "cmave");

        // Unclipped MAVE forces m = ceil(2 ln(4K/delta) / (alpha^2 beta^2)).
        let params = laplace_subexp_params(1.0).unwrap();
        let loss = LossSpec::mave(params);
        let mut opts = FixedBudgetBuildOptions::new(5.0, 0.1, 1, loss, 11);
        opts.m = Some(999); // ignored for unclipped kinds
        let cache = build_cache_fixed_budget(&env, &policy, &opts).unwrap();
        assert_eq!(cache.meta.m, 2);
        let fb = cache.meta.fixed_budget.as_ref().unwrap();
        assert_eq!(fb.subexp, Some(params));
        // The certified spec reconstructs from metadata.
        let spec = certified_loss_spec(&cache).unwrap();
        assert_eq!(spec.kind, LossKind::Mave);
    }

    #[test]
    fn predictions_parsers() {
        let csv = "state_id,value\n0,1.5\n1,-2.0\n# comment\n2,0.25\n";
        let p = parse_predictions(csv).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[&1], -2.0);

        let json_obj = r#"{"0": 1.5, "1": -2.0}"#;
        let p = parse_predictions(json_obj).unwrap();
        assert_eq!(p[&0], 1.5);

        let json_arr = "[[0, 1.5], [3, 4.0]]";
        let p = parse_predictions(json_arr).unwrap();
        assert_eq!(p[&3], 4.0);

        assert!(parse_predictions("0,notanumber\n").is_err());
    }
}
