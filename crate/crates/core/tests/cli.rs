//! Command-line behaviour: exit codes, file formats, defaults, config-file
//! layering, and equivalence between the CLI wrappers and the library calls.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use mceval::cache::{evaluate, load_cache};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mceval")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("mceval runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_required_flag_is_usage_error() {
    // No --out.
    let out = run(&["build", "--env", "chain", "--epsilon", "0.5"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_environment_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("c.vc");
    let out = run(&["build", "--env", "acrobot", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown environment"));
}

#[test]
fn build_twice_same_flags_identical_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vc");
    let b = dir.path().join("b.vc");
    for path in [&a, &b] {
        let out = run(&[
            "build", "--env", "chain", "--epsilon", "0.7", "--delta", "0.2", "--c", "2",
            "--K", "1", "--seed", "7", "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

fn write_perfect_predictions(cache_path: &Path, preds_path: &Path, skip: &[u64]) {
    let cache = load_cache(cache_path).unwrap();
    let mut text = String::from("state_id,value\n");
    for e in &cache.entries {
        if skip.contains(&e.id) {
            continue;
        }
        text.push_str(&format!("{},{}\n", e.id, e.value));
    }
    std::fs::write(preds_path, text).unwrap();
}

#[test]
fn evaluate_missing_ids_exit_2_listing_them() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("c.vc");
    let out = run(&[
        "build", "--env", "chain", "--epsilon", "0.8", "--delta", "0.2", "--seed", "3",
        "--out", cache_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let preds = dir.path().join("p.csv");
    write_perfect_predictions(&cache_path, &preds, &[1, 4]);
    let out = run(&[
        "evaluate", "--cache", cache_path.to_str().unwrap(),
        "--predictions", preds.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("missing"), "{err}");
    assert!(err.contains('1') && err.contains('4'), "{err}");
}

/// The evaluate subcommand is a thin wrapper: its JSON report equals the
/// library-level result field for field.
#[test]
fn evaluate_matches_library_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("c.vc");
    let out = run(&[
        "build", "--env", "chain", "--epsilon", "0.8", "--delta", "0.2", "--seed", "5",
        "--out", cache_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    // Noisy synthetic predictions.
    let cache = load_cache(&cache_path).unwrap();
    let preds_map: BTreeMap<u64, f64> =
        cache.entries.iter().map(|e| (e.id, e.value + 0.01 * (e.id as f64 % 7.0 - 3.0))).collect();
    let preds = dir.path().join("p.csv");
    let mut text = String::from("state_id,value\n");
    for (id, v) in &preds_map {
        text.push_str(&format!("{id},{v}\n"));
    }
    std::fs::write(&preds, text).unwrap();

    let out = run(&[
        "evaluate", "--cache", cache_path.to_str().unwrap(),
        "--predictions", preds.to_str().unwrap(), "--read-only",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cli_report: mceval::cache::ErrorReport = serde_json::from_str(&stdout(&out)).unwrap();

    let mut cache = load_cache(&cache_path).unwrap();
    let spec = mceval::cache::certified_loss_spec(&cache).unwrap();
    let lib_report = evaluate(&mut cache, &preds_map, &spec, true).unwrap();
    assert_eq!(cli_report, lib_report);
}

/// Default chain grid: 6 cells x m rows, medians nonincreasing in epsilon.
#[test]
fn experiment_grid_shape_and_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("exp.csv");
    let out = run(&[
        "experiment", "--env", "chain", "--m", "40", "--seed", "2",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();

    let data_rows: Vec<&str> =
        text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("env,")).collect();
    assert_eq!(data_rows.len(), 40 * 6, "expected 40 rows x 6 cells");
    assert!(text.lines().any(|l| l.starts_with("env,epsilon,")), "header row missing");
    assert!(text.lines().any(|l| l.starts_with("# mceval experiment")), "metadata missing");

    // Parse per-cell samples and check the medians fall as epsilon grows.
    let mut cells: BTreeMap<(String, String), Vec<u64>> = BTreeMap::new();
    for row in &data_rows {
        let f: Vec<&str> = row.split(',').collect();
        cells.entry((f[1].into(), f[2].into())).or_default().push(f[5].parse().unwrap());
    }
    assert_eq!(cells.len(), 6);
    let median = |xs: &mut Vec<u64>| {
        xs.sort_unstable();
        xs[xs.len() / 2]
    };
    for delta in ["0.01", "0.1"] {
        let mut prev = u64::MAX;
        for eps in ["0.01", "0.05", "0.1"] {
            let m = median(cells.get_mut(&(eps.to_string(), delta.to_string())).unwrap());
            assert!(m <= prev, "median not nonincreasing in epsilon at delta={delta}");
            prev = m;
        }
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.summary.json", out_path.display())).unwrap())
            .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 6);
}

#[test]
fn experiment_gates_benchmark_small_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("mc.csv");
    // epsilon 0.01 is gated on benchmarks without --allow-long.
    let out = run(&[
        "experiment", "--env", "mountain-car", "--m", "3", "--seed", "2",
        "--epsilons", "0.01,0.1", "--deltas", "0.1",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.contains("# gated epsilon cells"), "gate note missing");
    assert!(!text.contains("mountain-car,0.01,"), "gated cell was run");

    // All cells gated -> usage error.
    let out = run(&[
        "experiment", "--env", "puddle-world", "--m", "2", "--epsilons", "0.01",
        "--out", dir.path().join("pw.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_compare_row_count_matches_states() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("ratios.csv");
    let out = run(&[
        "oracle-compare", "--env", "bernoulli", "--states", "7", "--seed", "4",
        "--batch-size", "20000", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("state_id,")).count();
    assert_eq!(rows, 7);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("mceval.toml");
    std::fs::write(
        &config,
        r#"
[env]
kind = "chain"
gamma = 0.9
chain-states = 6

[defaults]
epsilon = 0.7
delta = 0.2
seed = 7
"#,
    )
    .unwrap();

    // Environment and parameters come entirely from the config file.
    let a = dir.path().join("a.vc");
    let out = run(&[
        "build", "--config", config.to_str().unwrap(), "--c", "2", "--K", "1",
        "--out", a.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // Equivalent all-flags invocation produces the identical file.
    let b = dir.path().join("b.vc");
    let out = run(&[
        "build", "--env", "chain", "--gamma", "0.9", "--chain-states", "6",
        "--epsilon", "0.7", "--delta", "0.2", "--seed", "7", "--c", "2", "--K", "1",
        "--out", b.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // A CLI flag overrides the config value.
    let c = dir.path().join("c.vc");
    let out = run(&[
        "build", "--config", config.to_str().unwrap(), "--epsilon", "0.8", "--c", "2",
        "--K", "1", "--out", c.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let cache = load_cache(&c).unwrap();
    assert_eq!(cache.meta.epsilon, 0.8);
}

#[test]
fn validate_reports_pass_lines() {
    let out = run(&["validate", "--trials", "40", "--reps", "4", "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("chain-oracle: PASS"), "{text}");
    assert!(text.contains("stopping-coverage: PASS"), "{text}");
    assert!(text.contains("certificate-coverage: PASS"), "{text}");
}
