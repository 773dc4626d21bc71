//! Command-line harness: cache construction, prediction evaluation, the
//! sample-count experiment grid, the bootstrap-oracle efficiency comparison,
//! and a self-check suite against the chain oracle.
//!
//! Output verbosity is controlled by the MCEVAL_VERBOSE environment variable;
//! everything else is flags (optionally seeded from a TOML config file).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::cache::{
    build_cache, build_cache_fixed_budget, certified_loss_spec, evaluate, load_cache,
    read_predictions, save_cache, BuildOptions, FixedBudgetBuildOptions, Predictions,
};
use crate::config::{
    build_env, build_policy, default_policy_kind, load_file_config, DefaultsSection, EnvKind,
    EnvParams, FileConfig, PolicyKind,
};
use crate::env::{
    chain_true_values, sample_initial_states, ChainEnv, Environment, ReturnDistribution,
    RngStream, SyntheticEnv, ACTION_RIGHT, STATE_SAMPLER_STREAM,
};
use crate::loss::{LossKind, LossSpec, SubExpParams};
use crate::policy::{FixedActionPolicy, Policy, UniformPolicy};
use crate::rollout::{sample_return, TruncationPlan};
use crate::stopping::{
    bootstrap_stop, ebgstop_tau, ebgstop_tau_from_source, BootstrapStopConfig, SliceSource,
    StoppingConfig, StoppingError, DEFAULT_MAX_SAMPLES,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream offset for the per-state bootstrap resampler in oracle-compare.
const BOOTSTRAP_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or inputs: exit code 2.
    Usage(String),
    /// Runtime failure: exit code 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failure(e.to_string())
}

fn verbose() -> bool {
    std::env::var_os("MCEVAL_VERBOSE").is_some_and(|v| v != "0" && !v.is_empty())
}

fn created_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

#[derive(Parser, Debug)]
#[command(
    name = "mceval",
    version,
    about = "High-confidence Monte-Carlo value caches and certified value-error reports"
)]
pub struct Cli {
    /// TOML config file supplying defaults for the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build an offline value cache with the adaptive stopping rule.
    Build(BuildArgs),
    /// Build a value cache with the fixed-state-budget rule (clipped or
    /// sub-exponential losses).
    BuildFixed(BuildFixedArgs),
    /// Certify a prediction file against a cache.
    Evaluate(EvaluateArgs),
    /// Per-state sample-count grid over (epsilon, delta) cells.
    Experiment(ExperimentArgs),
    /// Compare the stopping rule against the bootstrap-interval oracle.
    OracleCompare(OracleCompareArgs),
    /// Run the chain-oracle self checks (exact solve vs Monte Carlo,
    /// stopping coverage, end-to-end certificate coverage).
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EnvArgs {
    /// Environment: chain | cyclic-chain | mountain-car | puddle-world |
    /// constant | bernoulli | uniform.
    #[arg(long)]
    pub env: Option<String>,
    /// Discount for the chain environments.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of chain states.
    #[arg(long)]
    pub chain_states: Option<usize>,
    /// Return value of the constant synthetic environment.
    #[arg(long)]
    pub dist_value: Option<f64>,
    /// Success probability of the Bernoulli synthetic environment.
    #[arg(long)]
    pub dist_p: Option<f64>,
    /// Lower bound of the uniform synthetic environment.
    #[arg(long)]
    pub dist_lo: Option<f64>,
    /// Upper bound of the uniform synthetic environment.
    #[arg(long)]
    pub dist_hi: Option<f64>,
    /// Policy: uniform | energy-pumping | fixed (default depends on env).
    #[arg(long)]
    pub policy: Option<String>,
    /// Random-action blending for energy-pumping.
    #[arg(long)]
    pub mixing: Option<f64>,
    /// Action index for the fixed policy.
    #[arg(long)]
    pub fixed_action: Option<usize>,
}

struct Selection {
    env_kind: EnvKind,
    env: Box<dyn Environment>,
    policy: Box<dyn Policy>,
}

impl EnvArgs {
    fn resolve(&self, file: &FileConfig) -> Result<Selection, CliError> {
        let kind_str = self
            .env
            .clone()
            .or_else(|| file.env.kind.clone())
            .ok_or_else(|| CliError::Usage("no environment selected (use --env)".into()))?;
        let env_kind = EnvKind::parse(&kind_str).map_err(usage)?;
        let params = EnvParams {
            gamma: self.gamma.or(file.env.gamma),
            chain_states: self.chain_states.or(file.env.chain_states),
            dist_value: self.dist_value.or(file.env.value),
            dist_p: self.dist_p.or(file.env.p),
            dist_lo: self.dist_lo.or(file.env.lo),
            dist_hi: self.dist_hi.or(file.env.hi),
        };
        let env = build_env(env_kind, &params).map_err(usage)?;
        let policy_kind = match self.policy.clone().or_else(|| file.policy.kind.clone()) {
            Some(s) => PolicyKind::parse(&s).map_err(usage)?,
            None => default_policy_kind(env_kind),
        };
        let policy = build_policy(
            policy_kind,
            env.as_ref(),
            self.mixing.or(file.policy.mixing),
            self.fixed_action.or(file.policy.fixed_action),
        )
        .map_err(usage)?;
        Ok(Selection { env_kind, env, policy })
    }
}

fn file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => load_file_config(p).map_err(usage),
        None => Ok(FileConfig::default()),
    }
}

struct Defaults<'a>(&'a DefaultsSection);

impl Defaults<'_> {
    fn epsilon(&self, flag: Option<f64>) -> f64 {
        flag.or(self.0.epsilon).unwrap_or(0.1)
    }
    fn delta(&self, flag: Option<f64>) -> f64 {
        flag.or(self.0.delta).unwrap_or(0.1)
    }
    fn tau(&self, flag: Option<f64>) -> f64 {
        flag.or(self.0.tau).unwrap_or(1.0)
    }
    fn clip(&self, flag: Option<f64>) -> f64 {
        flag.or(self.0.clip).unwrap_or(2.0)
    }
    fn k(&self, flag: Option<u64>) -> u64 {
        flag.or(self.0.k).unwrap_or(1)
    }
    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.0.seed).unwrap_or(0)
    }
    fn max_samples(&self, flag: Option<u64>) -> u64 {
        flag.or(self.0.max_samples).unwrap_or(DEFAULT_MAX_SAMPLES)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = file_config(&cli.config)?;
    match cli.command {
        Command::Build(args) => cmd_build(args, &file),
        Command::BuildFixed(args) => cmd_build_fixed(args, &file),
        Command::Evaluate(args) => cmd_evaluate(args, &file),
        Command::Experiment(args) => cmd_experiment(args, &file),
        Command::OracleCompare(args) => cmd_oracle_compare(args, &file),
        Command::Validate(args) => cmd_validate(args, &file),
    }
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Clip level of the certified relative loss.
    #[arg(long = "c", visible_alias = "clip")]
    pub clip: Option<f64>,
    /// Query budget the certificate covers.
    #[arg(long = "K", visible_alias = "k-budget")]
    pub k: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-state sample ceiling.
    #[arg(long)]
    pub max_samples: Option<u64>,
    /// Output cache file.
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_build(args: BuildArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = Defaults(&file.defaults);
    let sel = args.env.resolve(file)?;
    let mut opts = BuildOptions::new(
        d.epsilon(args.epsilon),
        d.delta(args.delta),
        d.tau(args.tau),
        d.clip(args.clip),
        d.k(args.k),
        d.seed(args.seed),
    );
    opts.max_samples_per_state = d.max_samples(args.max_samples);
    opts.created_unix = created_unix();

    let start = Instant::now();
    let cache = build_cache(sel.env.as_ref(), sel.policy.as_ref(), &opts).map_err(failure)?;
    save_cache(&cache, &args.out).map_err(failure)?;
    let stats = cache.budget_stats();
    println!(
        "cache written to {} (env={}, policy={})",
        args.out.display(),
        cache.meta.env_id,
        cache.meta.policy_id
    );
    println!(
        "m = {} states, returns sampled = {} (per state min/median/max = {}/{}/{}), env steps = {}",
        cache.meta.m,
        cache.meta.total_samples,
        stats.min,
        stats.median,
        stats.max,
        cache.meta.total_env_steps
    );
    println!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

// ---------------------------------------------------------------------------
// build-fixed
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BuildFixedArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Loss to certify: cmave | cmsve | mave | msve.
    #[arg(long)]
    pub loss: String,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "c", visible_alias = "clip")]
    pub clip: Option<f64>,
    #[arg(long = "K", visible_alias = "k-budget")]
    pub k: Option<u64>,
    /// State count (clipped losses; ignored for mave/msve).
    #[arg(long)]
    pub m: Option<u64>,
    /// Sub-exponential alpha (mave/msve).
    #[arg(long)]
    pub alpha_se: Option<f64>,
    /// Sub-exponential beta (mave/msve).
    #[arg(long)]
    pub beta_se: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_build_fixed(args: BuildFixedArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = Defaults(&file.defaults);
    let sel = args.env.resolve(file)?;
    let kind = LossKind::parse(&args.loss).map_err(usage)?;
    let loss = match kind {
        LossKind::Cmave => LossSpec::cmave(d.clip(args.clip)).map_err(usage)?,
        LossKind::Cmsve => LossSpec::cmsve(d.clip(args.clip)).map_err(usage)?,
        LossKind::Mave | LossKind::Msve => {
            let alpha = args.alpha_se.ok_or_else(|| {
                CliError::Usage("--alpha-se is required for the unclipped losses".into())
            })?;
            let beta = args.beta_se.ok_or_else(|| {
                CliError::Usage("--beta-se is required for the unclipped losses".into())
            })?;
            let params = SubExpParams::new(alpha, beta).map_err(usage)?;
            if kind == LossKind::Mave {
                LossSpec::mave(params)
            } else {
                LossSpec::msve(params)
            }
        }
        LossKind::Cmapve => {
            return Err(CliError::Usage(
                "the fixed-budget builder certifies cmave/cmsve/mave/msve; use `build` for cmapve"
                    .into(),
            ))
        }
    };

    let mut opts = FixedBudgetBuildOptions::new(
        d.epsilon(args.epsilon),
        d.delta(args.delta),
        d.k(args.k),
        loss,
        d.seed(args.seed),
    );
    opts.m = args.m;
    opts.max_rounds = args.max_rounds.unwrap_or(DEFAULT_MAX_SAMPLES);
    opts.created_unix = created_unix();

    let start = Instant::now();
    let cache =
        build_cache_fixed_budget(sel.env.as_ref(), sel.policy.as_ref(), &opts).map_err(|e| {
            match &e {
                crate::cache::BuildError::InvalidOptions(_) => usage(e),
                crate::cache::BuildError::Stopping(StoppingError::InvalidConfig(_)) => usage(e),
                _ => failure(e),
            }
        })?;
    save_cache(&cache, &args.out).map_err(failure)?;
    let fb = cache.meta.fixed_budget.as_ref().expect("fixed-budget meta present");
    println!(
        "cache written to {} (loss={}, m={}, rounds per state={}, zeta={})",
        args.out.display(),
        cache.meta.certified_loss,
        cache.meta.m,
        fb.rounds,
        fb.zeta
    );
    println!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Cache file produced by `build` or `build-fixed`.
    #[arg(long)]
    pub cache: PathBuf,
    /// Predictions: CSV `state_id,value` or JSON (`{"0": v}` / `[[0, v]]`).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Loss kind; defaults to what the cache certifies.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long = "c", visible_alias = "clip")]
    pub clip: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Do not consume K budget; the report is flagged advisory.
    #[arg(long)]
    pub read_only: bool,
    /// Write the JSON report here as well as stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn cmd_evaluate(args: EvaluateArgs, _file: &FileConfig) -> Result<(), CliError> {
    let mut cache = load_cache(&args.cache).map_err(failure)?;
    let predictions: Predictions = read_predictions(&args.predictions).map_err(CliError::Usage)?;

    let spec = match &args.loss {
        None => certified_loss_spec(&cache).map_err(failure)?,
        Some(s) => {
            let kind = LossKind::parse(s).map_err(usage)?;
            match kind {
                LossKind::Cmapve => LossSpec::cmapve(
                    args.clip.unwrap_or(cache.meta.clip),
                    args.tau.unwrap_or(cache.meta.tau),
                )
                .map_err(usage)?,
                LossKind::Cmave => {
                    LossSpec::cmave(args.clip.unwrap_or(cache.meta.clip)).map_err(usage)?
                }
                LossKind::Cmsve => {
                    LossSpec::cmsve(args.clip.unwrap_or(cache.meta.clip)).map_err(usage)?
                }
                LossKind::Mave | LossKind::Msve => {
                    let base = certified_loss_spec(&cache).map_err(failure)?;
                    if base.kind != kind {
                        return Err(CliError::Usage(format!(
                            "cache certifies {}, not {}",
                            base.kind.as_str(),
                            kind.as_str()
                        )));
                    }
                    base
                }
            }
        }
    };

    let report = evaluate(&mut cache, &predictions, &spec, args.read_only).map_err(|e| match e {
        crate::cache::EvaluateError::MissingPredictions(_) => usage(e),
        other => failure(other),
    })?;

    if !args.read_only {
        // Persist the consumed K budget in place.
        save_cache(&cache, &args.cache).map_err(failure)?;
    }

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, &json).map_err(failure)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Comma-separated accuracy grid.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Comma-separated confidence grid.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of states sampled from d.
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-state sample ceiling (exhaustion is recorded, the run continues).
    #[arg(long)]
    pub max_samples: Option<u64>,
    /// Run the long benchmark cells (epsilon < 0.05) too.
    #[arg(long)]
    pub allow_long: bool,
    /// Output CSV; a JSON summary lands next to it as `<out>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, serde::Serialize)]
struct CellSummary {
    epsilon: f64,
    delta: f64,
    min: u64,
    median: u64,
    max: u64,
    total_samples: u64,
    budget_exhausted_states: u64,
}

struct ExperimentRow {
    epsilon: f64,
    delta: f64,
    state_id: u64,
    samples_used: u64,
    env_steps: u64,
    termination: &'static str,
}

fn cmd_experiment(args: ExperimentArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = Defaults(&file.defaults);
    let sel = args.env.resolve(file)?;
    let env = sel.env.as_ref();
    let policy = sel.policy.as_ref();

    let mut epsilons = args.epsilons.unwrap_or_else(|| vec![0.01, 0.05, 0.1]);
    let deltas = args.deltas.unwrap_or_else(|| vec![0.01, 0.1]);
    let tau = d.tau(args.tau);
    let m = args.m.unwrap_or(100);
    let seed = d.seed(args.seed);
    let max_samples = d.max_samples(args.max_samples);
    if epsilons.is_empty() || deltas.is_empty() || m == 0 {
        return Err(CliError::Usage("experiment needs nonempty grids and m >= 1".into()));
    }

    let mut gated_out = Vec::new();
    if sel.env_kind.is_benchmark() && !args.allow_long {
        let (keep, gated): (Vec<f64>, Vec<f64>) =
            epsilons.into_iter().partition(|&e| e >= 0.05);
        epsilons = keep;
        gated_out = gated;
        if epsilons.is_empty() {
            return Err(CliError::Usage(
                "all requested epsilon cells are gated on this benchmark; pass --allow-long".into(),
            ));
        }
    }

    let mut sampler = RngStream::new(seed, STATE_SAMPLER_STREAM);
    let states = sample_initial_states(env, m as usize, &mut sampler);

    let mut cells: Vec<(usize, f64, f64)> = Vec::new();
    let mut idx = 0usize;
    for &eps in &epsilons {
        for &delta in &deltas {
            cells.push((idx, eps, delta));
            idx += 1;
        }
    }

    let start = Instant::now();
    let rows: Vec<Vec<ExperimentRow>> = cells
        .par_iter()
        .map(|&(cell_idx, eps, delta)| {
            let plan = TruncationPlan::for_env(env, eps, tau)
                .map_err(|e| failure(format!("cell (eps={eps}, delta={delta}): {e}")))?;
            let cfg = StoppingConfig::new(eps, delta, tau, env.spec().v_max)
                .with_max_samples(max_samples);
            let cell_rows: Vec<ExperimentRow> = states
                .par_iter()
                .enumerate()
                .map(|(i, state)| {
                    let stream = (cell_idx as u64) << 32 | i as u64;
                    let mut rng = RngStream::new(seed, stream);
                    match ebgstop_tau(env, policy, state, &cfg, &plan, &mut rng) {
                        Ok(est) => Ok(ExperimentRow {
                            epsilon: eps,
                            delta,
                            state_id: i as u64,
                            samples_used: est.samples_used,
                            env_steps: est.env_steps,
                            termination: est.termination.as_str(),
                        }),
                        Err(StoppingError::SampleBudgetExceeded { samples, env_steps, .. }) => {
                            Ok(ExperimentRow {
                                epsilon: eps,
                                delta,
                                state_id: i as u64,
                                samples_used: samples,
                                env_steps,
                                termination: "budget-exceeded",
                            })
                        }
                        Err(e) => Err(failure(format!("state {i}: {e}"))),
                    }
                })
                .collect::<Result<_, CliError>>()?;
            if verbose() {
                eprintln!(
                    "cell eps={eps} delta={delta} finished after {:.1} s",
                    start.elapsed().as_secs_f64()
                );
            }
            Ok(cell_rows)
        })
        .collect::<Result<_, CliError>>()?;

    // Assemble the delimited output in deterministic (cell, state) order.
    let mut out = String::new();
    let _ = writeln!(out, "# mceval experiment v{VERSION}");
    let _ = writeln!(
        out,
        "# env={} policy={} tau={} m={} seed={} max_samples={} epsilons={} deltas={} allow_long={}",
        env.id(),
        policy.id(),
        tau,
        m,
        seed,
        max_samples,
        join_f64(&epsilons),
        join_f64(&deltas),
        args.allow_long,
    );
    if !gated_out.is_empty() {
        let _ = writeln!(
            out,
            "# gated epsilon cells (rerun with --allow-long): {}",
            join_f64(&gated_out)
        );
    }
    let _ = writeln!(out, "env,epsilon,delta,tau,state_id,samples_used,trajectory_steps,termination");
    let mut summaries = Vec::new();
    for cell_rows in &rows {
        for r in cell_rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                env.id(),
                r.epsilon,
                r.delta,
                tau,
                r.state_id,
                r.samples_used,
                r.env_steps,
                r.termination
            );
        }
        let mut samples: Vec<u64> = cell_rows.iter().map(|r| r.samples_used).collect();
        samples.sort_unstable();
        let exhausted = cell_rows.iter().filter(|r| r.termination == "budget-exceeded").count();
        summaries.push(CellSummary {
            epsilon: cell_rows[0].epsilon,
            delta: cell_rows[0].delta,
            min: samples[0],
            median: samples[samples.len() / 2],
            max: *samples.last().unwrap(),
            total_samples: samples.iter().sum(),
            budget_exhausted_states: exhausted as u64,
        });
    }
    for s in &summaries {
        let _ = writeln!(
            out,
            "# summary epsilon={} delta={} min={} median={} max={} total={} budget_exhausted={}",
            s.epsilon, s.delta, s.min, s.median, s.max, s.total_samples, s.budget_exhausted_states
        );
    }
    std::fs::write(&args.out, &out).map_err(failure)?;

    let summary_path = summary_path(&args.out);
    let summary_json = serde_json::to_string_pretty(&summaries).expect("summaries serialize");
    std::fs::write(&summary_path, summary_json).map_err(failure)?;

    println!("experiment rows written to {}", args.out.display());
    println!("summary written to {}", summary_path.display());
    for s in &summaries {
        println!(
            "eps={:<6} delta={:<6} samples min/median/max = {}/{}/{}",
            s.epsilon, s.delta, s.min, s.median, s.max
        );
    }
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".summary.json");
    PathBuf::from(os)
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// oracle-compare
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct OracleCompareArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Number of states to compare on.
    #[arg(long, default_value_t = 10)]
    pub states: u64,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Pre-drawn returns per state forming the empirical distribution.
    #[arg(long, default_value_t = 100_000)]
    pub batch_size: u64,
    /// Reject batches smaller than this.
    #[arg(long, default_value_t = 1_000)]
    pub min_batch: u64,
    /// Bootstrap resample sets per interval (k).
    #[arg(long, default_value_t = 1_000)]
    pub bootstrap_sets: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

struct CompareRow {
    state_id: u64,
    samples_ebg: u64,
    samples_bootstrap: u64,
    status: &'static str,
}

fn cmd_oracle_compare(args: OracleCompareArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = Defaults(&file.defaults);
    if args.batch_size < args.min_batch {
        return Err(CliError::Usage(format!(
            "batch size {} is below the configured minimum {}",
            args.batch_size, args.min_batch
        )));
    }
    if args.states == 0 {
        return Err(CliError::Usage("need at least one state".into()));
    }
    let sel = args.env.resolve(file)?;
    let env = sel.env.as_ref();
    let policy = sel.policy.as_ref();
    let eps = d.epsilon(args.epsilon);
    let delta = d.delta(args.delta);
    let tau = d.tau(args.tau);
    let seed = d.seed(args.seed);

    let mut sampler = RngStream::new(seed, STATE_SAMPLER_STREAM);
    let states = sample_initial_states(env, args.states as usize, &mut sampler);
    let plan = TruncationPlan::for_env(env, eps, tau).map_err(failure)?;
    let cfg = StoppingConfig::new(eps, delta, tau, env.spec().v_max)
        .with_max_samples(args.batch_size);
    let boot_cfg = BootstrapStopConfig {
        epsilon: eps,
        delta,
        tau,
        resample_sets: args.bootstrap_sets,
    };

    let rows: Vec<CompareRow> = states
        .par_iter()
        .enumerate()
        .map(|(i, state)| {
            let mut draw_rng = RngStream::new(seed, i as u64);
            let mut batch = Vec::with_capacity(args.batch_size as usize);
            for _ in 0..args.batch_size {
                let g = sample_return(env, policy, state, &plan, &mut draw_rng)
                    .map_err(|e| failure(format!("state {i}: {e}")))?;
                batch.push(g.value);
            }
            let mut unused_rng = RngStream::new(seed, i as u64);
            let mut source = SliceSource::new(&batch);
            let (samples_ebg, mut status) =
                match ebgstop_tau_from_source(&mut source, &cfg, &mut unused_rng) {
                    Ok(est) => (est.samples_used, "ok"),
                    Err(StoppingError::SampleBudgetExceeded { samples, .. })
                    | Err(StoppingError::BatchExhausted { consumed: samples }) => {
                        (samples, "ebg-exhausted")
                    }
                    Err(e) => return Err(failure(format!("state {i}: {e}"))),
                };
            let mut boot_rng = RngStream::new(seed, BOOTSTRAP_STREAM_BASE + i as u64);
            let samples_bootstrap = match bootstrap_stop(&batch, &boot_cfg, &mut boot_rng) {
                Ok(est) => est.samples_used,
                Err(StoppingError::BatchExhausted { consumed }) => {
                    status = "bootstrap-exhausted";
                    consumed
                }
                Err(e) => return Err(failure(format!("state {i}: {e}"))),
            };
            Ok(CompareRow { state_id: i as u64, samples_ebg, samples_bootstrap, status })
        })
        .collect::<Result<_, CliError>>()?;

    let mut out = String::new();
    let _ = writeln!(out, "# mceval oracle-compare v{VERSION}");
    let _ = writeln!(
        out,
        "# env={} policy={} epsilon={} delta={} tau={} states={} batch_size={} bootstrap_sets={} seed={}",
        env.id(),
        policy.id(),
        eps,
        delta,
        tau,
        args.states,
        args.batch_size,
        args.bootstrap_sets,
        seed
    );
    let _ = writeln!(out, "state_id,samples_ebgstop,samples_bootstrap,ratio,status");
    let mut ratios = Vec::new();
    for r in &rows {
        let ratio = r.samples_ebg as f64 / r.samples_bootstrap.max(1) as f64;
        ratios.push(ratio);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.state_id, r.samples_ebg, r.samples_bootstrap, ratio, r.status
        );
    }
    std::fs::write(&args.out, &out).map_err(failure)?;

    ratios.sort_by(|a, b| a.total_cmp(b));
    let median = ratios[ratios.len() / 2];
    println!("oracle comparison written to {}", args.out.display());
    println!(
        "samples_ebgstop / samples_bootstrap over {} states: min={:.2} median={:.2} max={:.2}",
        rows.len(),
        ratios[0],
        median,
        ratios[ratios.len() - 1]
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Independent stopping runs per distribution.
    #[arg(long, default_value_t = 200)]
    pub trials: u64,
    /// Full build-and-evaluate repetitions for the certificate check.
    #[arg(long, default_value_t = 20)]
    pub reps: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also run the 10^6-rollout convergence check.
    #[arg(long)]
    pub thorough: bool,
}

struct CheckOutcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_validate(args: ValidateArgs, _file: &FileConfig) -> Result<(), CliError> {
    let outcomes = vec![
        check_chain_oracle(args.seed, args.thorough).map_err(failure)?,
        check_stopping_coverage(args.trials, args.seed).map_err(failure)?,
        check_certificate_coverage(args.reps, args.seed).map_err(failure)?,
    ];

    let mut all_pass = true;
    for o in &outcomes {
        println!("{}: {} ({})", o.name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        all_pass &= o.pass;
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Failure("validation failed".into()))
    }
}

/// Monte-Carlo means on the chain agree with the exact linear solve at the
/// 1/sqrt(n) rate (3 standard errors plus the truncation bias).
fn check_chain_oracle(seed: u64, thorough: bool) -> Result<CheckOutcome, String> {
    let chain = ChainEnv::episodic(6, 0.9).map_err(|e| e.to_string())?;
    let right = FixedActionPolicy::new(ACTION_RIGHT, 2);
    let exact = chain_true_values(&chain, &right).map_err(|e| e.to_string())?;
    if (exact[0] - 0.6561).abs() > 1e-12 {
        return Ok(CheckOutcome {
            name: "chain-oracle",
            pass: false,
            detail: format!("deterministic solve {} != 0.6561", exact[0]),
        });
    }

    let uniform = UniformPolicy::new(2);
    let values = chain_true_values(&chain, &uniform).map_err(|e| e.to_string())?;
    let plan = TruncationPlan::for_env(&chain, 0.01, 1.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let ns: &[u64] = if thorough { &[10_000, 1_000_000] } else { &[10_000] };
    for (k, &n) in ns.iter().enumerate() {
        let mut rng = RngStream::new(seed, 7_000 + k as u64);
        let mut acc = crate::stopping::WelfordAccumulator::new();
        for _ in 0..n {
            let g = sample_return(&chain, &uniform, &chain.state(0), &plan, &mut rng)
                .map_err(|e| e.to_string())?;
            acc.update(g.value);
        }
        let se = (acc.biased_variance() / n as f64).sqrt();
        let tol = 3.0 * se + plan.truncation_bias();
        let dev = (acc.mean() - values[0]).abs();
        worst = worst.max(dev / tol);
        if dev > tol {
            return Ok(CheckOutcome {
                name: "chain-oracle",
                pass: false,
                detail: format!("n={n}: |{} - {}| > {tol}", acc.mean(), values[0]),
            });
        }
    }
    Ok(CheckOutcome {
        name: "chain-oracle",
        pass: true,
        detail: format!("worst deviation at {:.2} of tolerance", worst),
    })
}

/// Stopping-rule coverage on three analytic return distributions.
fn check_stopping_coverage(trials: u64, seed: u64) -> Result<CheckOutcome, String> {
    let (eps, delta, tau) = (0.1, 0.05, 1.0);
    let dists = [
        ReturnDistribution::Constant(0.6561),
        ReturnDistribution::Bernoulli(0.5),
        ReturnDistribution::Uniform(0.0, 1.0),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for dist in dists {
        let env = SyntheticEnv::new(dist).map_err(|e| e.to_string())?;
        let truth = env.true_value();
        let policy = UniformPolicy::new(1);
        let plan = TruncationPlan::episodic(eps, tau, env.spec().r_max);
        let cfg = StoppingConfig::new(eps, delta, tau, env.spec().v_max);
        let violations: u64 = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(seed ^ 0x5eed, 10_000 + t);
                let est = ebgstop_tau(&env, &policy, &env.start_state(), &cfg, &plan, &mut rng)
                    .expect("stopping terminates on synthetic distributions");
                u64::from((est.value - truth).abs() > eps * (truth.abs() + tau))
            })
            .sum();
        let rate = violations as f64 / trials as f64;
        // Hard failure only above twice the nominal delta, to bound flakiness.
        pass &= rate <= 2.0 * delta;
        let _ = write!(detail, "{}={:.3} ", dist.id(), rate);
    }
    Ok(CheckOutcome { name: "stopping-coverage", pass, detail: detail.trim_end().to_string() })
}

/// End-to-end certificate: |l_hat(v_hat, v_bar) - l(v_hat, v*)| <= epsilon
/// across independent cache builds on the chain oracle.
fn check_certificate_coverage(reps: u64, seed: u64) -> Result<CheckOutcome, String> {
    let (eps, delta, tau, clip, k) = (0.3, 0.2, 1.0, 2.0, 1);
    let chain = ChainEnv::episodic(6, 0.9).map_err(|e| e.to_string())?;
    let policy = UniformPolicy::new(2);
    let exact = chain_true_values(&chain, &policy).map_err(|e| e.to_string())?;
    let spec = LossSpec::cmapve(clip, tau).map_err(|e| e.to_string())?;

    let non_terminal = 5usize; // d is uniform over the chain's start states
    let violations: u64 = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut opts = BuildOptions::new(eps, delta, tau, clip, k, seed.wrapping_add(rep));
            opts.max_samples_per_state = 10_000_000;
            let mut cache =
                build_cache(&chain, &policy, &opts).expect("chain cache build succeeds");

            // A fixed noisy predictor: one perturbed value per chain state.
            use rand::Rng;
            let mut noise_rng = RngStream::new(seed ^ 0xabcd, rep);
            let magnitude = [0.05, 0.2, 0.5][rep as usize % 3];
            let v_hat: Vec<f64> = (0..non_terminal)
                .map(|idx| exact[idx] + noise_rng.random_range(-magnitude..magnitude))
                .collect();

            // Exact l(v_hat, v*) by enumeration over d.
            let true_loss = (0..non_terminal)
                .map(|idx| spec.state_loss(v_hat[idx], exact[idx]).expect("valid loss"))
                .sum::<f64>()
                / non_terminal as f64;

            let predictions: Predictions = cache
                .entries
                .iter()
                .map(|e| (e.id, v_hat[e.coords[0] as usize]))
                .collect();
            let report = evaluate(&mut cache, &predictions, &spec, true).expect("evaluate");
            u64::from((report.empirical_loss - true_loss).abs() > eps)
        })
        .sum();

    let rate = violations as f64 / reps as f64;
    Ok(CheckOutcome {
        name: "certificate-coverage",
        pass: rate <= delta,
        detail: format!("violation rate {rate:.3} over {reps} reps (delta {delta})"),
    })
}
