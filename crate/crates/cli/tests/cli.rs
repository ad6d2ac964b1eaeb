use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "--n=2000",
    "--hidden-sizes=6,4",
    "--max-steps=40",
    "--warmup-steps=10",
    "--eval-every=20",
    "--batch-size=128",
    "--bag-size=16",
];

fn milift(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milift"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("MILIFT_OUT")
        .output()
        .expect("binary runs")
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(TINY).copied().collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn without_clock(mut report: Value) -> Value {
    report.as_object_mut().unwrap().remove("wall_clock_s");
    report
}

#[test]
fn synth_is_deterministic_and_reports_the_ate() {
    let dir = tempfile::tempdir().unwrap();
    let a = milift(
        dir.path(),
        &[
            "synth",
            "--output",
            dir.path().join("a.csv").to_str().unwrap(),
        ],
    );
    let b = milift(
        dir.path(),
        &[
            "synth",
            "--output",
            dir.path().join("b.csv").to_str().unwrap(),
        ],
    );
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout).unwrap();
    let digest = |t: &str| {
        t.lines()
            .find(|l| l.starts_with("sha256"))
            .unwrap()
            .to_string()
    };
    assert_eq!(digest(&text), digest(&String::from_utf8(b.stdout).unwrap()));
    let numbers: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("empirical ATE"))
        .unwrap()
        .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter_map(|s| s.parse().ok())
        .collect();
    let (ate, se) = (numbers[0], numbers[1]);
    assert!((ate - 0.015).abs() <= 3.0 * se, "ATE {ate} SE {se}");
    let rows = std::fs::read_to_string(dir.path().join("a.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 50_001);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn synth_rejects_impossible_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let out = milift(dir.path(), &["synth", "--base-rate=0.99", "--tau-max=0.06"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("outside [0, 1]"));
}

#[test]
fn train_writes_the_fixed_layout_and_replays_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = milift(&first, &with_tiny(&["train", "--runs=2", "--alpha=0"]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "manifest.json",
        "config.txt",
        "aggregate.json",
        "run_0/report.json",
        "run_1/curve.csv",
        "run_1/model.json",
    ] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let manifest = read_json(&first.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["resolved"]["train"]["batch_size"], 128);
    let report = read_json(&first.join("run_0/report.json"));
    assert!(report["history"]
        .as_array()
        .unwrap()
        .iter()
        .all(|h| h["l_mil"] == 0.0));
    let curve = std::fs::read_to_string(first.join("run_0/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 101);

    let second = dir.path().join("second");
    let config = first.join("config.txt");
    let out = milift(&second, &["--config", config.to_str().unwrap(), "train"]);
    assert!(out.status.success());
    for run in ["run_0", "run_1"] {
        let a = without_clock(read_json(&first.join(run).join("report.json")));
        let b = without_clock(read_json(&second.join(run).join("report.json")));
        assert_eq!(a, b);
    }
}

#[test]
fn command_line_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    let mut text: String = TINY
        .iter()
        .map(|f| format!("{}\n", f.trim_start_matches("--")))
        .collect();
    text.push_str("alpha = 0.5\nbag_size = 8\n");
    std::fs::write(&conf, text).unwrap();
    let out = milift(
        dir.path(),
        &[
            "--config",
            conf.to_str().unwrap(),
            "train",
            "--alpha",
            "0.02",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg = &read_json(&dir.path().join("run_0/report.json"))["config"];
    assert_eq!(cfg["alpha"], 0.02);
    assert_eq!(cfg["bag_size"], 8);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_milift"))
        .args(["synth", "--n=100"])
        .env("MILIFT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("synthetic.csv").exists());
}

#[test]
fn sweep_completes_with_a_failed_cell_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // A 256-row bag cannot fit a 128-row batch: that cell fails, the others run.
    let out = milift(
        dir.path(),
        &with_tiny(&["sweep", "--bag-sizes=16,256,16", "--alphas=0.01"]),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sizes,alpha=0.01");
    assert!(lines[1].starts_with("128*16,"));
    assert_eq!(lines[2], "128*256,failed");
    assert_eq!(lines.len(), 3);
    assert_eq!(
        read_json(&dir.path().join("sweep.json"))["duplicates_removed"],
        true
    );
}

#[test]
fn ablation_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = milift(dir.path(), &with_tiny(&["ablate", "--runs=2"]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let labels: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["w/o base model", "w/o clustering", "proposed"]);
    let no_base = read_json(&dir.path().join("without_base/run_0/report.json"));
    assert_eq!(no_base["config"]["base_weight"], 0.0);
    for h in no_base["history"].as_array().unwrap() {
        assert!(h["l_base"].as_f64().unwrap() > 0.0);
        let (l, l_mil) = (h["l"].as_f64().unwrap(), h["l_mil"].as_f64().unwrap());
        assert!(
            (l - 0.001 * l_mil).abs() <= 1e-12 * l.abs().max(1e-300),
            "{l} vs {l_mil}"
        );
    }
}

#[test]
fn eval_and_curve_score_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = milift(dir.path(), &with_tiny(&["train"]));
    assert!(out.status.success());
    let model = dir.path().join("run_0/model.json");
    let data = dir.path().join("data.csv");
    assert!(milift(
        dir.path(),
        &[
            "synth",
            "--n=500",
            "--synth-seed=9",
            "--output",
            data.to_str().unwrap()
        ]
    )
    .status
    .success());
    let model = model.to_str().unwrap();
    let out = milift(
        dir.path(),
        &["eval", "--model", model, "--data", data.to_str().unwrap()],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result = read_json(&dir.path().join("eval.json"));
    assert_eq!(result["rows"], 500);
    assert!(result["auuc"].is_f64() && result["oracle_auuc"].is_f64());
    let curve = dir.path().join("c.csv");
    let out = milift(
        dir.path(),
        &[
            "curve",
            "--model",
            model,
            "--data",
            data.to_str().unwrap(),
            "--n-points=10",
            "--output",
            curve.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(curve).unwrap();
    assert_eq!(text.lines().next(), Some("phi,g"));
    assert_eq!(text.lines().count(), 11);
    let out = milift(dir.path(), &["eval", "--model", model, "--d=4", "--n=100"]);
    assert_eq!(out.status.code(), Some(1));
}
