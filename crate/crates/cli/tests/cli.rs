use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wormgraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wormgraph"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wormgraph(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = wormgraph(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn runs(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["runtime_s"] = Value::Null;
            v
        })
        .collect()
}

const SMALL: &str = r#"
n_worms = 5
[synth]
T = 320
noise_std = 0.05
"#;

fn synth(dir: &Path, out: &str, config: &str) {
    write(dir, &format!("{out}.toml"), config);
    ok(dir, &["gen-synth", "--config", &format!("{out}.toml"), "--out", out, "--seed", "4"]);
}

#[test]
fn gen_synth_is_reproducible_and_guarded() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "a", SMALL);
    ok(dir, &["gen-synth", "--config", "a.toml", "--out", "b", "--seed", "4"]);
    let files: Vec<_> = fs::read_dir(dir.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().ends_with(".json")).count(), 6);
    for f in &files {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap());
    }
    let err = fail(dir, &["gen-synth", "--config", "a.toml", "--out", "a", "--seed", "4"]);
    assert!(err.contains("already exists"), "{err}");
    ok(dir, &["gen-synth", "--config", "a.toml", "--out", "a", "--seed", "4", "--force"]);
}

#[test]
fn gen_synth_rejects_bad_state_count_before_writing() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.toml", "[synth]\nn_states = 3\n");
    let err = fail(tmp.path(), &["gen-synth", "--config", "bad.toml", "--out", "never"]);
    assert!(err.contains("n_states"), "{err}");
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn config_errors_name_file_and_field() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "typo.toml", "[model]\nhiden_dim = 4\n");
    let err = fail(tmp.path(), &["train", "--config", "typo.toml", "--out", "x"]);
    assert!(err.contains("typo.toml") && err.contains("hiden_dim"), "{err}");
}

#[test]
fn cross_validate_over_pairs_resumes_to_the_same_runs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", SMALL);
    write(
        dir,
        "cv.toml",
        r#"
recordings = ["data"]
[model]
module_kind = "linear"
[plan]
permutation_size = 2
[train]
max_epochs = 1
"#,
    );
    ok(dir, &["cross-validate", "--config", "cv.toml", "--out", "cv"]);
    let full = runs(&dir.join("cv/runs.jsonl"));
    assert_eq!(full.len(), 100);

    let text = fs::read_to_string(dir.join("cv/runs.jsonl")).unwrap();
    let partial: Vec<&str> = text.lines().take(37).collect();
    fs::write(dir.join("cv/runs.jsonl"), partial.join("\n") + "\n{\"torn").unwrap();
    fs::remove_file(dir.join("cv/summary.json")).unwrap();
    let out = ok(dir, &["cross-validate", "--config", "cv.toml", "--out", "cv", "--resume"]);
    assert!(out.contains("37 resumed"), "{out}");
    assert_eq!(runs(&dir.join("cv/runs.jsonl")), full);

    let err = fail(dir, &["cross-validate", "--config", "cv.toml", "--out", "cv", "--resume", "--seed", "9"]);
    assert!(err.contains("different configuration"), "{err}");
}

#[test]
fn manifest_rerun_reproduces_training() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", SMALL);
    write(
        dir,
        "train.toml",
        r#"
recordings = ["data"]
seed = 12
[plan]
held_out_worm_ids = ["synth-4"]
[train]
max_epochs = 4
[model]
hidden_dim = 8
"#,
    );
    ok(dir, &["train", "--config", "train.toml", "--out", "first"]);
    ok(dir, &["train", "--config", "first/manifest.json", "--out", "second", "--workers", "1"]);
    assert_eq!(runs(&dir.join("first/runs.jsonl")), runs(&dir.join("second/runs.jsonl")));
    for f in ["checkpoint.json", "final_checkpoint.json", "history.tsv", "confusion.tsv", "manifest.json"] {
        assert_eq!(fs::read(dir.join("first").join(f)).unwrap(), fs::read(dir.join("second").join(f)).unwrap(), "{f}");
    }
    let err = fail(dir, &["eval", "--config", "first/manifest.json", "--out", "e"]);
    assert!(err.contains("written by `train`"), "{err}");
}

#[test]
fn eval_rejects_checkpoint_of_other_shape_without_touching_inputs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", SMALL);
    synth(dir, "small", &format!("{SMALL}n_neurons = 10\n"));
    write(dir, "t.toml", "recordings = [\"data\"]\n[train]\nmax_epochs = 2\n");
    ok(dir, &["train", "--config", "t.toml", "--out", "model"]);
    let before = fs::read(dir.join("small/synth-0.json")).unwrap();
    let err = fail(dir, &["eval", "--data", "small", "--checkpoint", "model/checkpoint.json", "--out", "e"]);
    assert!(err.contains("15") && err.contains("10"), "{err}");
    assert_eq!(before, fs::read(dir.join("small/synth-0.json")).unwrap());

    let out = ok(dir, &["eval", "--data", "data", "--checkpoint", "model/checkpoint.json", "--out", "e"]);
    assert!(out.starts_with("accuracy"), "{out}");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(report["per_worm"].as_object().unwrap().len(), 5);
}

#[test]
fn rollout_writes_one_row_per_step() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", "n_worms = 2\n[synth]\nT = 240\nn_neurons = 6\n");
    write(
        dir,
        "p.toml",
        "recordings = [\"data\"]\n[plan]\ntask = \"predict\"\n[model]\nmodule_kind = \"mlp\"\nhidden_dim = 16\n[train]\nmax_epochs = 2\n",
    );
    ok(dir, &["train", "--config", "p.toml", "--out", "model"]);
    ok(dir, &["rollout", "--config", "p.toml", "--checkpoint", "model/checkpoint.json", "--out", "r"]);
    let table = fs::read_to_string(dir.join("r/rollout.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 17);
    assert!(lines[0].starts_with("step\tmse"));
    assert!(lines[16].starts_with("16\t"));
    let err = fail(dir, &["edges", "--config", "p.toml", "--checkpoint", "model/checkpoint.json", "--out", "x"]);
    assert!(err.contains("no inferred edges"), "{err}");
}

#[test]
fn edges_tables_and_connectome_report() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", "n_worms = 3\n[synth]\nT = 320\nn_neurons = 5\n");
    write(dir, "s.toml", "recordings = [\"data\"]\n[train]\nmax_epochs = 2\n");
    write(dir, "d.toml", "recordings = [\"data\"]\n[model]\nedge_mode = \"dynamic\"\n[train]\nmax_epochs = 2\n");
    ok(dir, &["train", "--config", "s.toml", "--out", "static"]);
    ok(dir, &["train", "--config", "d.toml", "--out", "dynamic"]);
    write(dir, "empty.txt", "# nothing\n");
    write(dir, "chain.txt", "N00 N01 2\nN01 N02 1\nN02 N03 4\nN03 N04 1\nN04 N00 3\n");

    ok(dir, &["edges", "--data", "data", "--checkpoint", "static/checkpoint.json", "--connectome", "empty.txt", "--out", "es"]);
    let table = fs::read_to_string(dir.join("es/edges.tsv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(!dir.join("es/edges_std.tsv").exists());
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("es/report.json")).unwrap()).unwrap();
    assert!(report["correlation"].is_null());
    assert_eq!(report["shared_pairs"], 0);

    ok(dir, &["edges", "--data", "data", "--checkpoint", "dynamic/checkpoint.json", "--connectome", "chain.txt", "--out", "ed"]);
    for f in ["edges_mean.tsv", "edges_std.tsv"] {
        assert_eq!(fs::read_to_string(dir.join("ed").join(f)).unwrap().lines().count(), 6);
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("ed/report.json")).unwrap()).unwrap();
    assert_eq!(report["shared_pairs"], 20);
    let r = report["correlation"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&r));
}

#[test]
fn pca_reports_each_recording() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "data", "n_worms = 2\n[synth]\nT = 400\n");
    ok(dir, &["pca", "--data", "data", "--out", "p"]);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("p/pca.json")).unwrap()).unwrap();
    for id in ["synth-0", "synth-1"] {
        let top = summary[id]["top_k"].as_f64().unwrap();
        assert!(top > 0.99, "{id}: {top}");
        assert_eq!(fs::read_to_string(dir.join(format!("p/pca_{id}.tsv"))).unwrap().lines().count(), 401);
    }
}
