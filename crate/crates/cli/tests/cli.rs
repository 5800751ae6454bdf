use std::path::Path;
use std::process::{Command, Output};

fn absgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absgd")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toy_config(name: &str, optimizer: &str, extra: &str) -> String {
    format!(
        r#"{{
  "name": "{name}",
  "data": {{ "kind": "toy2d", "counts": [60, 12], "means": [[-1, 0], [1.5, 0]], "test_per_class": 30 }},
  "arch": {{ "hidden_dims": [] }},
  "optimizer": {{ {optimizer} }},
  "epochs": 3,
  "batch_size": 16,
  "seeds": [0, 1]{extra}
}}"#
    )
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn synth_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = absgd(&[
        "synth", "--classes", "3", "--dim", "4", "--n-max", "50", "--imbalance", "lt", "--rho", "10",
        "--test-per-class", "7", "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let train = std::fs::read_to_string(out.join("train.csv")).unwrap();
    let test = std::fs::read_to_string(out.join("test.csv")).unwrap();
    assert!(train.starts_with("f0,f1,f2,f3,label\n"));
    // 50, 15, 5
    assert_eq!(train.lines().count(), 1 + 70);
    assert_eq!(test.lines().count(), 1 + 21);

    let again = dir.path().join("again");
    absgd(&[
        "synth", "--classes", "3", "--dim", "4", "--n-max", "50", "--imbalance", "lt", "--rho", "10",
        "--test-per-class", "7", "--seed", "3", "--out", again.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(again.join("train.csv")).unwrap(), train);
}

#[test]
fn gradcheck_passes_and_rejects_bad_input() {
    for lambda in ["1", "-1", "inf"] {
        let o = absgd(&["gradcheck", "--arch", "mlp1", "--loss", "focal", "--lambda", lambda]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("PASS"));
    }
    assert_eq!(code(&absgd(&["gradcheck", "--lambda", "0"])), 1);
    assert_eq!(code(&absgd(&["gradcheck", "--arch", "cnn"])), 1);
    assert_eq!(code(&absgd(&["no-such-command"])), 1);
    assert_eq!(code(&absgd(&["--help"])), 0);
}

#[test]
fn train_eval_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.json");
    write(&cfg, &toy_config("toy", r#""optimizer": "absgd", "eta": 0.1, "lambda": 1"#, ""));
    let runs = dir.path().join("runs");
    let o = absgd(&["train", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", runs.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = std::fs::read_to_string(runs.join("toy-seed1.jsonl")).unwrap();
    assert_eq!(run.lines().filter(|l| l.contains("\"type\":\"epoch\"")).count(), 3);
    assert!(run.lines().last().unwrap().contains("\"type\":\"summary\""));

    let ckpt = runs.join("toy-seed1.ckpt");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let header: Vec<&str> = text.lines().take(6).collect();
    assert_eq!(
        header,
        ["absgd-checkpoint 1", "input_dim 2", "hidden_dims", "num_classes 2", "frozen", "values 6"]
    );
    assert_eq!(text.lines().count(), 12);

    let data = dir.path().join("data");
    absgd(&["synth", "--classes", "2", "--dim", "2", "--n-max", "20", "--test-per-class", "5", "--out", data.to_str().unwrap()]);
    let o = absgd(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.join("test.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let top1 = m["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(m["confusion"].as_array().unwrap().len(), 2);

    let plot = dir.path().join("plot");
    let o = absgd(&[
        "plot-data", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.join("train.csv").to_str().unwrap(),
        "--nx", "4", "--ny", "3", "--out", plot.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(plot.join("grid.csv")).unwrap().lines().count(), 1 + 12);
    assert_eq!(std::fs::read_to_string(plot.join("points.csv")).unwrap().lines().count(), 1 + 40);

    // feature count mismatch
    let wide = dir.path().join("wide");
    absgd(&["synth", "--classes", "2", "--dim", "3", "--n-max", "5", "--test-per-class", "2", "--out", wide.to_str().unwrap()]);
    let o = absgd(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", wide.join("test.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("configs");
    std::fs::create_dir(&cfgs).unwrap();
    write(&cfgs.join("a.json"), &toy_config("absgd", r#""optimizer": "absgd", "eta": 0.1, "lambda": 1"#, ""));
    write(&cfgs.join("b.json"), &toy_config("sgd", r#""optimizer": "sgd", "eta": 0.1"#, ""));
    write(&cfgs.join("notes.txt"), "ignored");
    let runs = dir.path().join("runs");
    let o = absgd(&[
        "sweep", "--config-dir", cfgs.to_str().unwrap(), "--seeds", "4,2,4", "--jobs", "2", "--out", runs.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<String> = std::fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["absgd-seed2.jsonl", "absgd-seed4.jsonl", "sgd-seed2.jsonl", "sgd-seed4.jsonl"]);
    let table = stdout(&o);
    assert!(table.contains("absgd") && table.contains("sgd"));

    let csv = dir.path().join("report.csv");
    let o = absgd(&["report", "--runs", runs.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), table);
    let csv = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,runs,top1_mean,top1_std,minority_mean,minority_std");
    assert!(lines[1].starts_with("absgd,2,"));
    assert!(lines[2].starts_with("sgd,2,"));
}

#[test]
fn failing_runs_are_recorded_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("configs");
    std::fs::create_dir(&cfgs).unwrap();
    write(&cfgs.join("ok.json"), &toy_config("ok", r#""optimizer": "sgd", "eta": 0.1"#, ""));
    write(
        &cfgs.join("overflow.json"),
        &toy_config(
            "overflow",
            r#""optimizer": "absgd", "eta": 1000, "lambda": 0.01, "log_domain": false"#,
            "",
        ),
    );
    let runs = dir.path().join("runs");
    let o = absgd(&["sweep", "--config-dir", cfgs.to_str().unwrap(), "--seeds", "0", "--out", runs.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let failure = std::fs::read_to_string(runs.join("overflow-seed0.jsonl")).unwrap();
    assert!(failure.contains("\"type\":\"failure\"") && failure.contains("log_domain"));
    assert!(runs.join("ok-seed0.jsonl").exists());

    let o = absgd(&["report", "--runs", runs.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ok") && !stdout(&o).contains("overflow"));
}

#[test]
fn exit_codes_for_config_numeric_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    write(&bad, &toy_config("bad", r#""optimizer": "sgd", "eta": 0.1"#, r#", "epochz": 3"#));
    assert_eq!(code(&absgd(&["train", "--config", bad.to_str().unwrap()])), 1);

    let div = dir.path().join("div.json");
    write(
        &div,
        &toy_config("div", r#""optimizer": "absgd", "eta": 1000, "lambda": 0.01, "log_domain": false"#, ""),
    );
    let out = dir.path().join("out");
    let o = absgd(&["train", "--config", div.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("log_domain"));
    assert!(out.join("div-seed0.jsonl").exists());
    assert!(!out.join("div-seed0.ckpt").exists());

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&absgd(&["train", "--config", missing.to_str().unwrap()])), 3);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        absgd::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 3);
}
