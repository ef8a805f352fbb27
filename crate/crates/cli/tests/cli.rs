use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ottd_cli::commands;
use ottd_cli::results::read_rows;
use ottd_cli::ExperimentConfig;
use ottd_core::data::TransitionDataset;
use tempfile::TempDir;

const CHAIN: &str = include_str!("../configs/chain.toml");

fn write_config(dir: &Path, body: &str) -> PathBuf {
    fs::write(dir.join("chain.toml"), CHAIN).unwrap();
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path
}

fn load(dir: &Path, body: &str) -> ExperimentConfig {
    ExperimentConfig::load(&write_config(dir, body)).unwrap()
}

fn ottd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ottd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const BAIRD: &str = r#"
experiment_id = "baird"
problem = "baird"
algorithms = ["otd", "ottd", "rm", "gtd2"]
seeds = [0]
max_iters = 3000
record_every = 10
"#;

const CHAIN_RUN: &str = r#"
experiment_id = "chain"
problem = "file:chain.toml"
algorithms = ["ottd", "ottd_nis", "otq"]
correction_mode = "target_action"
seeds = [0, 1, 2, 3]
max_iters = 2000
record_every = 7

[dataset]
size = 200
horizon = 10
"#;

const PATHOLOGICAL: &str = r#"
experiment_id = "two_state"
problem = "two_state"
algorithms = ["otd", "ottd"]
lambda = "pathological"
gamma = 0.9
eta = 0.5
seeds = [0]
max_iters = 100
"#;

#[test]
fn run_results_reload_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = load(dir.path(), CHAIN_RUN);
    let out = dir.path().join("out");
    let rows = commands::cmd_run(&cfg, &out, &mut Vec::new()).unwrap();
    let back = read_rows(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(back, rows);
    for w in rows.windows(2) {
        if (&w[0].algorithm, w[0].seed) == (&w[1].algorithm, w[1].seed) {
            assert!(w[0].step < w[1].step);
        }
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), CHAIN_RUN);
    let config = path.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ottd(&["run", "--config", config, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    assert_eq!(fs::read(a.join("mean.csv")).unwrap(), fs::read(b.join("mean.csv")).unwrap());
}

#[test]
fn zero_iterations_give_one_row_per_seed() {
    let dir = TempDir::new().unwrap();
    let body = CHAIN_RUN.replace("max_iters = 2000", "max_iters = 0");
    let cfg = load(dir.path(), &body);
    let rows = commands::cmd_run(&cfg, &dir.path().join("out"), &mut Vec::new()).unwrap();
    assert_eq!(rows.len(), 3 * 4);
    assert!(rows.iter().all(|r| r.step == 0));
}

#[test]
fn baird_ottd_converges_and_plots_four_curves() {
    let dir = TempDir::new().unwrap();
    let cfg = load(dir.path(), BAIRD);
    let out = dir.path().join("out");
    let rows = commands::cmd_run(&cfg, &out, &mut Vec::new()).unwrap();
    let last = |alg: &str| rows.iter().rfind(|r| r.algorithm == alg).unwrap().clone();
    assert_eq!(last("ottd").status, "converged");
    assert_eq!(last("otd").status, "diverged");
    let files = commands::cmd_plot(&out.join("results.csv"), &out, &mut Vec::new()).unwrap();
    assert_eq!(files.len(), 2);
    let svg = fs::read_to_string(out.join("baird_max_value_error.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert!(svg.contains("log scale"));
}

#[test]
fn plot_rejects_bad_results() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "experiment_id,algorithm,seed,step,max_value_error,emsbe,status\n").unwrap();
    let o = ottd(&["plot", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let partial = dir.path().join("partial.csv");
    fs::write(&partial, "experiment_id,algorithm,seed\ne,ottd,0\n").unwrap();
    let o = ottd(&["plot", partial.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing column"));
    let o = ottd(&["plot", dir.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = write_config(dir.path(), BAIRD);
    let out = dir.path().join("out");
    let o = ottd(&["diagnose", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, BAIRD.replace("seeds = [0]", "seeds = []")).unwrap();
    assert_eq!(ottd(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&bad, BAIRD.replace("\"baird\"\nalgorithms", "\"file:missing.toml\"\nalgorithms")).unwrap();
    assert_eq!(ottd(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(ottd(&["run"]).status.code(), Some(2));
    let absent = dir.path().join("absent.toml");
    assert_eq!(ottd(&["run", "--config", absent.to_str().unwrap()]).status.code(), Some(4));

    let patho = dir.path().join("two_state.toml");
    fs::write(&patho, PATHOLOGICAL).unwrap();
    let p = patho.to_str().unwrap();
    assert_eq!(ottd(&["fixed-point", "--config", p]).status.code(), Some(3));
    let o = ottd(&["diagnose", "--config", p, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("no fixed point"));
}

#[test]
fn seed_override_replaces_seeds() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), CHAIN_RUN);
    let out = dir.path().join("out");
    let o = ottd(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--seed-override",
        "5,9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = read_rows(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds, vec![5, 9]);
}

#[test]
fn table1_command() {
    let dir = TempDir::new().unwrap();
    let o = ottd(&["table1", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let metric = |alg: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{alg},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(metric("otd") > 1.0);
    for alg in ["ottd", "rm", "gtd2"] {
        let m = metric(alg);
        assert!(m > 0.9 && m < 1.0, "{alg} {m}");
    }
    assert!(metric("ottd") < metric("rm"));
}

#[test]
fn baird_diagnose_writes_table1() {
    let dir = TempDir::new().unwrap();
    let cfg = load(dir.path(), BAIRD);
    let out = dir.path().join("out");
    commands::cmd_diagnose(&cfg, &out, &mut Vec::new()).unwrap();
    assert_eq!(fs::read_to_string(out.join("table1.csv")).unwrap().lines().count(), 5);
}

fn discrepancies(report: &str) -> Vec<f64> {
    report
        .lines()
        .filter_map(|l| l.split("|theta - theta*|_inf = ").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[test]
fn fixed_point_matches_iteration() {
    let dir = TempDir::new().unwrap();
    let cfg = load(
        dir.path(),
        r#"
experiment_id = "random"
problem = "random"
algorithm = "ottd"
seeds = [0, 1, 2]
max_iters = 200000
record_every = 100000
tol = 1e-13
[random]
k = 4
d = 9
"#,
    );
    let mut buf = Vec::new();
    commands::cmd_fixed_point(&cfg, &mut buf).unwrap();
    let d = discrepancies(&String::from_utf8(buf).unwrap());
    assert_eq!(d.len(), 3);
    assert!(d.iter().all(|&x| x < 1e-6), "{d:?}");

    let baird = load(dir.path(), &BAIRD.replace("\"otd\", ", ""));
    let mut buf = Vec::new();
    commands::cmd_fixed_point(&baird, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let err: f64 = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("max value error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-12, "{text}");
}

#[test]
fn four_room_bound_and_is_divergence() {
    let dir = TempDir::new().unwrap();
    let cfg = load(
        dir.path(),
        r#"
experiment_id = "four_room"
problem = "four_room"
algorithms = ["ottd", "ottd_is"]
correction_mode = "target_action"
seeds = [0, 1]
max_iters = 20000
record_every = 1000
[dataset]
size = 300
horizon = 30
"#,
    );
    let out = dir.path().join("out");
    let rows = commands::cmd_run(&cfg, &out, &mut Vec::new()).unwrap();
    for seed in [0, 1] {
        let last = |alg: &str| rows.iter().rfind(|r| r.algorithm == alg && r.seed == seed).unwrap().clone();
        let is = last("ottd_is");
        assert!(is.status == "diverged" || is.max_value_error.unwrap() > 10.0, "{is:?}");
        assert!(last("ottd").max_value_error.unwrap() <= 1.0);
    }
    let plots = commands::cmd_plot(&out.join("results.csv"), &out, &mut Vec::new()).unwrap();
    assert_eq!(plots.len(), 2);

    commands::cmd_bound(&cfg, &out, &mut Vec::new()).unwrap();
    let text = fs::read_to_string(out.join("bounds.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let totals: Vec<f64> = rd
        .records()
        .map(|r| r.unwrap().get(8).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 2);
    assert!(totals.iter().all(|t| t.is_finite() && *t > 0.0));
}

#[test]
fn collected_datasets_load_back() {
    let dir = TempDir::new().unwrap();
    let cfg = load(dir.path(), CHAIN_RUN);
    let paths = commands::cmd_collect(&cfg, &dir.path().join("data"), &mut Vec::new()).unwrap();
    assert_eq!(paths.len(), 4);
    let ds = TransitionDataset::read_csv(fs::File::open(&paths[0]).unwrap()).unwrap();
    assert!(ds.n_real() > 0);

    // A run on the saved dataset matches a run that collects it afresh.
    let body = CHAIN_RUN.replace("seeds = [0, 1, 2, 3]", "seeds = [0]");
    let fresh = commands::cmd_run(&load(dir.path(), &body), &dir.path().join("a"), &mut Vec::new()).unwrap();
    let saved = body.replace("[dataset]", "[dataset]\npath = \"data/dataset_seed0.csv\"");
    let loaded = commands::cmd_run(&load(dir.path(), &saved), &dir.path().join("b"), &mut Vec::new()).unwrap();
    assert_eq!(fresh, loaded);
}
