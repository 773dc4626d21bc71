//! High-confidence ground-truth value estimation for fixed-policy evaluation.
//!
//! The crate builds an offline cache of Monte-Carlo value estimates for a set
//! of states sampled from an MDP, with an explicit (ε, δ, τ) accuracy
//! guarantee per state, and then certifies the error of any candidate value
//! function against that cache with a closed-form high-probability bound.
//!
//! The pieces, bottom up:
//!
//! - [`mod@env`]: simulatable environments (benchmark tasks plus analytically
//!   solvable chains used as test oracles) and seeded, stream-indexed RNG.
//! - [`policy`]: fixed stochastic policies to evaluate.
//! - [`rollout`]: single truncated-return sampling with a bias bound.
//! - [`stopping`]: adaptive stopping rules (relative-error empirical-Bernstein
//!   stopping, a fixed-budget variant for clipped losses, and a bootstrap
//!   interval used as an idealised efficiency baseline).
//! - [`loss`]: loss functionals (clipped relative / absolute / squared value
//!   error) and every closed-form deviation bound and sample-size formula.
//! - [`cache`]: the persisted value-cache artifact and certified error reports.
//! - [`cli`]: the `mceval` command-line harness.

pub mod cache;
pub mod cli;
pub mod config;
pub mod env;
pub mod loss;
pub mod policy;
pub mod rollout;
pub mod stopping;

pub use cache::{build_cache, evaluate, load_cache, save_cache, ErrorReport, ValueCache};
pub use env::{EnvSpec, Environment, RngStream, State};
pub use policy::Policy;
pub use rollout::TruncationPlan;
pub use stopping::{ebgstop_tau, EstimateResult, StoppingConfig};
