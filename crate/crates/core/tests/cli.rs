//! Command-line behaviour: configuration precedence and errors, exit codes,
//! artifact names and frozen CSV schemas, and thread-count independence of
//! the summaries.

use clap::Parser;
use milne::cli::artifacts::read_data_csv;
use milne::cli::commands::build_operator;
use milne::cli::{resolve_config, Cli, RunConfig, OUTPUT_DIR_ENV};
use milne::geometry_force::ForceMode;
use milne::velocity_grid::build_grid;
use milne::MilneError;
use std::path::Path;
use std::process::{Command, Output};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn milne(args: &[&str], threads: usize, env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_milne"));
    cmd.args(args).env("RAYON_NUM_THREADS", threads.to_string()).env_remove(OUTPUT_DIR_ENV);
    if let Some(d) = env_dir {
        cmd.env(OUTPUT_DIR_ENV, d);
    }
    cmd.output().expect("binary runs")
}

fn summary(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("summary is not JSON ({e}); stderr: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(GOLDEN).join(name)).unwrap()
}

fn first_line(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    format!("{}\n", text.lines().next().unwrap())
}

fn only_file(dir: &Path, prefix: &str, ext: &str) -> std::path::PathBuf {
    let mut found: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .collect();
    assert_eq!(found.len(), 1, "{prefix}*{ext} in {}", dir.display());
    found.remove(0)
}

fn resolve(args: &[&str], env_dir: Option<&str>) -> milne::Result<RunConfig> {
    let mut full = vec!["milne"];
    full.extend_from_slice(args);
    let cli = Cli::try_parse_from(full).expect("arguments parse");
    resolve_config(&cli.command, env_dir.map(String::from))
}

#[test]
fn empty_file_yields_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "").unwrap();
    let cfg = resolve(&["solve", "--config", path.to_str().unwrap()], None).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn flags_override_the_file_and_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "problem.epsilon = 0.05\nproblem.mode = \"classical\"\noutput.dir = \"from_file\"\n").unwrap();
    let p = path.to_str().unwrap();
    let cfg = resolve(&["solve", "--config", p], None).unwrap();
    assert_eq!((cfg.problem.epsilon, cfg.problem.mode), (0.05, ForceMode::Classical));
    assert_eq!(cfg.output.dir, "from_file");
    let cfg = resolve(&["solve", "--config", p], Some("from_env")).unwrap();
    assert_eq!(cfg.output.dir, "from_env");
    let cfg = resolve(&["solve", "--config", p, "--epsilon", "0.02", "--output-dir", "from_flag"], Some("from_env"))
        .unwrap();
    assert_eq!(cfg.problem.epsilon, 0.02);
    assert_eq!(cfg.output.dir, "from_flag");
    let cfg = resolve(&["compare", "--eps", "0.05,0.02,0.01", "--n", "1,2"], None).unwrap();
    assert_eq!(cfg.compare.epsilons, vec![0.05, 0.02, 0.01]);
    assert_eq!(cfg.compare.ns, vec![1.0, 2.0]);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = milne(&["solve", "--epsilon", "0.3"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));

    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "grid.n_rings = 16\nsolver.tolerance = 1e-9\n").unwrap();
    let out = milne(&["validate", "--config", path.to_str().unwrap()], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.tolerance"));

    let out = milne(&["compare", "--eps", "0.05,abc"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    let out = milne(&["frobnicate"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn zero_data_solve_writes_hashed_artifacts_with_frozen_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = milne(&["solve", "--data", "zero"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    let hash = s["config_hash"].as_str().unwrap().to_string();
    assert_eq!(s["d"], serde_json::json!([0.0, 0.0, 0.0, 0.0]));
    assert!(s["k0"].is_null());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let csv = only_file(dir.path(), "solution_", ".csv");
    assert!(csv.to_string_lossy().contains(&hash));
    assert_eq!(first_line(&csv), golden("solution_header.csv"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(only_file(dir.path(), "solution_", ".json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = sidecar.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["D0", "D1", "D2", "D3", "K0", "config_hash", "flux0", "iterations", "residual"]);
    assert_eq!(sidecar["config_hash"], hash.as_str());
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    for rec in reader.records().take(2000) {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), 6);
        assert_eq!(rec[5].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn validate_passes_on_defaults_independent_of_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = milne(&["validate"], 1, Some(a.path()));
    let two = milne(&["validate"], 2, Some(b.path()));
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(two.status.code(), Some(0));
    assert_eq!(one.stdout, two.stdout, "validate summaries differ between thread counts");
    let s = summary(&one);
    assert_eq!(s["all_pass"], true);
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let csv = only_file(a.path(), "validate_", ".csv");
    let names: String =
        std::fs::read_to_string(&csv).unwrap().lines().map(|l| format!("{}\n", l.split(',').next().unwrap())).collect();
    assert_eq!(names, golden("validate_checks.txt"));
    assert_eq!(first_line(&csv), golden("validate_header.csv"));
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(only_file(b.path(), "validate_", ".csv")).unwrap());
}

#[test]
fn compare_sweep_is_independent_of_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["compare", "--eps", "0.05,0.02,0.01", "--n", "1,2", "--no-calibrate"];
    let one = milne(&args, 1, Some(a.path()));
    let two = milne(&args, 2, Some(b.path()));
    // M = 50 does not certify every row: the command reports it as inconclusive.
    assert_eq!(one.status.code(), Some(4), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(two.status.code(), Some(4));
    assert_eq!(one.stdout, two.stdout, "compare summaries differ between thread counts");
    let csv = only_file(a.path(), "compare_", ".csv");
    assert_eq!(first_line(&csv), golden("compare_header.csv"));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    assert_eq!(pairs, [(0.05, 1.0), (0.05, 2.0), (0.02, 1.0), (0.02, 2.0), (0.01, 1.0), (0.01, 2.0)]);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(only_file(b.path(), "compare_", ".csv")).unwrap());
}

#[test]
fn grazing_and_correct_artifacts_have_frozen_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = milne(&["grazing", "--ladder", "0.02,0.01,0.005"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = only_file(dir.path(), "grazing_", ".csv");
    assert_eq!(first_line(&csv), golden("grazing_header.csv"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let out = milne(&["correct", "--data", "basis", "--epsilon", "0.05"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["h_tilde"], serde_json::json!([0.0, 0.0, 0.0, 0.0]));
    let t = only_file(dir.path(), "t_matrix_", ".csv");
    assert_eq!(first_line(&t), golden("t_matrix_header.csv"));
    assert_eq!(std::fs::read_to_string(&t).unwrap().lines().count(), 5);
}

#[test]
fn mismatched_operator_cache_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = milne(&["kernel"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cache = only_file(dir.path(), "kernel_", ".bin");
    let c = cache.to_str().unwrap();
    let out = milne(&["validate", "--cache", c, "--n-theta", "48"], 1, Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    let mut cfg = RunConfig::default();
    cfg.kernel.cache = Some(c.to_string());
    assert!(build_operator(&cfg).is_ok());
    cfg.grid.v_max = 7.0;
    assert!(matches!(build_operator(&cfg), Err(MilneError::Config(_))));
}

#[test]
fn inflow_data_files_are_checked() {
    let grid = build_grid(8.0, 16, 32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("h.csv");
    std::fs::write(&good, "ring,angle_index,h\n0,0,1.5\n3,7,-2\n").unwrap();
    let v = read_data_csv(&good, &grid).unwrap();
    assert_eq!(v[grid.index(0, 0)], 1.5);
    assert_eq!(v[grid.index(3, 7)], -2.0);
    assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "r,j,h\n0,0,1\n").unwrap();
    assert!(matches!(read_data_csv(&bad, &grid), Err(MilneError::Config(_))));
    std::fs::write(&bad, "ring,angle_index,h\n16,0,1\n").unwrap();
    assert!(matches!(read_data_csv(&bad, &grid), Err(MilneError::Config(_))));
}
