use std::path::Path;
use std::process::{Command, Output};

use trdrl::replay::{DemoFile, Transition};
use trdrl::trainer::{read_run_dir, run_plain_sac, train, RunConfig, UpdateEvent};

const TINY: [&str; 16] = [
    "--set", "episodes=2", "--set", "horizon=8", "--set", "batch_size=16", "--set", "hidden_dim=16", "--set",
    "warmup=4", "--set", "eval_interval=1", "--set", "eval_episodes=2", "--set", "demos=2",
];

fn trdrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trdrl")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(TINY);
    v
}

#[test]
fn gen_demos_writes_ten_successes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("peg.demos");
    let out = trdrl(&["gen-demos", "--env", "peg-insert", "--count", "10", "--seed", "0", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let file = DemoFile::load(&path).unwrap();
    assert_eq!(file.trajectories.len(), 10);
    assert!(file.trajectories.iter().all(|t| t.succeeded()));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = trdrl(&["train", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("config not found"), "{}", text(&out.stderr));
}

#[test]
fn bad_input_is_a_usage_error() {
    assert_eq!(trdrl(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(trdrl(&["train", "--env", "kitchen"]).status.code(), Some(1));
    assert_eq!(trdrl(&["train", "--set", "horizon=0"]).status.code(), Some(1));
    assert_eq!(trdrl(&["train", "--set", "colour=blue"]).status.code(), Some(1));
    assert_eq!(trdrl(&["gen-demos", "--env", "peg-insert", "--count", "x"]).status.code(), Some(1));
    assert_eq!(trdrl(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_documents_every_flag() {
    let out = trdrl(&["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for flag in [
        "--env", "--mode", "--seed", "--episodes", "--beta", "--scheme", "--no-aug", "--no-filter", "--no-shaping",
        "--out", "--config", "--set",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
    let top = text(&trdrl(&["--help"]).stdout);
    for cmd in ["gen-demos", "train", "eval", "sweep-beta", "ablate-potential", "ablate-components", "aggregate"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg_path = dir.path().join("base.cfg");
    std::fs::write(&cfg_path, "# tiny\nenv = door-inward\nseed = 3\n").unwrap();
    let args = with_tiny(&["train", "--config", cfg_path.to_str().unwrap(), "--no-shaping", "--out", run.to_str().unwrap()]);
    let out = trdrl(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let rd = read_run_dir(&run).unwrap();
    assert_eq!(rd.config.env.as_str(), "door-inward");
    assert_eq!(rd.config.seed, 3);
    assert!(!rd.config.shaping);
    assert_eq!(rd.config.horizon, 8);

    let out = trdrl(&["eval", "--run", run.to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let lines: Vec<String> = text(&out.stdout).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("door-inward-open "));
    let rate: f64 = lines[1].split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn sweep_beta_writes_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    let args = with_tiny(&["sweep-beta", "--values", "0.01,0.001,0.0001", "--workers", "2", "--out", root.to_str().unwrap()]);
    let out = trdrl(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let mut betas = Vec::new();
    for v in ["0.01", "0.001", "0.0001"] {
        let rd = read_run_dir(&root.join(format!("beta-{v}")).join("seed0")).unwrap();
        betas.push(rd.config.beta);
    }
    assert_eq!(betas, vec![0.01, 0.001, 0.0001]);
    let summary = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
}

#[test]
fn ablate_potential_covers_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("pot");
    let args = with_tiny(&["ablate-potential", "--seeds", "0", "--no-aug", "--out", root.to_str().unwrap()]);
    let out = trdrl(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for tag in ["linear", "triangular", "geom-orig", "geom"] {
        let rd = read_run_dir(&root.join(format!("scheme-{tag}")).join("seed0")).unwrap();
        assert_eq!(rd.config.scheme, tag);
        assert!(rd.config.shaping);
    }
}

fn record(cfg: &RunConfig, plain: bool) -> Vec<(usize, Vec<Transition>, Vec<f64>)> {
    let mut log = Vec::new();
    let mut obs = |e: &UpdateEvent| log.push((e.task, e.batch.to_vec(), e.rewards.to_vec()));
    if plain {
        run_plain_sac(cfg, Some(&mut obs)).unwrap();
    } else {
        train(cfg, Some(&mut obs)).unwrap();
    }
    log
}

fn comparison_methods(root: &Path) -> Vec<String> {
    let csv = std::fs::read_to_string(root.join("comparison.csv")).unwrap();
    let mut methods: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_owned()).collect();
    methods.dedup();
    methods
}

#[test]
fn ablate_components_runs_four_arms() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("abl");
    let args = with_tiny(&["ablate-components", "--seeds", "0", "--out", root.to_str().unwrap()]);
    let out = trdrl(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(comparison_methods(&root), ["sac", "+aug", "+shaping", "tr-sac"]);

    let full = read_run_dir(&root.join("tr-sac/seed0")).unwrap().config;
    assert!(full.augmentation && full.filter && full.shaping);
    let mut expected = RunConfig::default();
    for kv in TINY.iter().skip(1).step_by(2) {
        let (k, v) = kv.split_once('=').unwrap();
        expected.set(k, v).unwrap();
    }
    assert_eq!(full, expected);

    let base = read_run_dir(&root.join("sac/seed0")).unwrap().config;
    assert!(!base.augmentation && !base.shaping);
    let stream = record(&base, false);
    assert!(!stream.is_empty());
    assert_eq!(stream, record(&base, true));

    let agg = trdrl(&["aggregate", root.to_str().unwrap(), "--stat", "mean-std"]);
    assert_eq!(agg.status.code(), Some(0), "{}", text(&agg.stderr));
    let csv = text(&agg.stdout);
    assert!(csv.starts_with("method,transitions,stat,value,spread"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

#[test]
fn aggregate_without_runs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(trdrl(&["aggregate", dir.path().to_str().unwrap()]).status.code(), Some(1));
}
