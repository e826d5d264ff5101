use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const WALK: &str = r#"
[experiment]
kind = "tree-equality"
seed = 7
tolerance = 1e-12

[plans]
count = 200

[tree]
nodes = [
  { id = 0, h = 0.0 },
  { id = 1, parent = 0, prob = 0.5, h = 1.0 },
  { id = 2, parent = 0, prob = 0.5, h = 1.0 },
  { id = 3, parent = 1, prob = 0.5, h = 4.0 },
  { id = 4, parent = 1, prob = 0.5, h = 0.0 },
  { id = 5, parent = 2, prob = 0.5, h = 0.0 },
  { id = 6, parent = 2, prob = 0.5, h = 4.0 },
]
"#;

const SMALL_BM: &str = r#"
[experiment]
kind = "convergence"
seed = 11
tolerance = 0.5

[model]
name = "bm-quadratic"

[simulation]
start_time = 0.0
start_state = [0.0]
steps = 20
paths = 3000
caps = [1, 4, 16]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_randstop"))
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], config: &Path) -> Output {
    bin().arg(args[0]).arg(config).args(&args[1..]).output().unwrap()
}

fn header() -> String {
    randstop::experiment::CSV_HEADER.join(",")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_good_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "walk.toml", WALK);
    let out = run(&["validate"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ok"));
}

#[test]
fn validate_lists_every_violation() {
    let dir = TempDir::new().unwrap();
    let body = WALK.replace("seed = 7\n", "").replace("count = 200", "count = 0");
    let cfg = write(&dir, "bad.toml", &body);
    let out = run(&["validate"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("seed"), "{text}");
    assert!(text.contains("plans.count"), "{text}");
}

#[test]
fn seed_flag_fills_missing_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "noseed.toml", &WALK.replace("seed = 7\n", ""));
    assert_eq!(run(&["validate", "--seed", "3"], &cfg).status.code(), Some(0));
}

#[test]
fn run_writes_csv_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "walk.toml", WALK);
    let csv = dir.path().join("nested/out.csv");
    let out = run(&["run", "--out", csv.to_str().unwrap()], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header().as_str()));
    assert_eq!(lines.count(), 1);
}

#[test]
fn run_to_stdout_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "walk.toml", WALK);
    let out = run(&["run"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with(&header()));
}

const COARSE_PUT: &str = r#"
[experiment]
kind = "diffusion-compare"
seed = 2718
tolerance = 0.0

[model]
name = "gbm-put"

[simulation]
start_time = 0.0
start_state = [1.0]
steps = 2
paths = 20000
caps = [4]
"#;

#[test]
fn failing_rows_exit_one() {
    // Two exercise dates cannot reach the lattice value of the American put.
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "coarse.toml", COARSE_PUT);
    let out = run(&["run"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.lines().skip(1).any(|l| l.contains(",false,")), "{text}");
}

#[test]
fn invalid_config_on_run_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.toml", &WALK.replace("seed = 7\n", ""));
    let out = run(&["run"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn missing_file_is_an_error() {
    let out = bin().args(["run", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn list_models_names_builtins() {
    let out = bin().arg("list-models").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in ["bm-quadratic", "gbm-put", "controlled-drift"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn output_independent_of_workers() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bm.toml", SMALL_BM);
    let csv = |w: &str| {
        let out = run(&["run", "--workers", w], &cfg);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let one = csv("1");
    assert_eq!(one, csv("4"));
    assert_eq!(one, csv("1"));
}

#[test]
fn trace_goes_to_stderr() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "walk.toml", WALK);
    let plain = run(&["run"], &cfg);
    let traced = run(&["run", "--trace"], &cfg);
    assert_eq!(plain.stdout, traced.stdout);
    assert!(traced.stderr.len() >= plain.stderr.len());
}
