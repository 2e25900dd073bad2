use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use skeleton_refine::metrics::evaluate;
use skeleton_refine::seqio::load_sequence;
use skeleton_refine::synth::read_manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skelrefine"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn net(window: usize, seed: u64) -> Value {
    json!({
        "input_dim": 48, "output_dim": 48, "hidden_sizes": [8, 8],
        "recurrent_layer": 1, "window_length": window, "seed": seed
    })
}

/// Four 50-frame sequences: 200 frames in all.
fn write_config(dir: &Path, iterations: usize) -> PathBuf {
    let cfg = json!({
        "corpus_dir": "corpus",
        "models_dir": "models",
        "output_dir": "out",
        "corpus": {
            "sequences": 4,
            "motion": {"n_frames": 50},
            "split": {"train": 0.5, "validation": 0.25, "test": 0.25},
            "seed": 11
        },
        "pdrnn": net(7, 1),
        "vdrnn": net(20, 2),
        "vdrnn_plus": net(20, 3),
        "optimizer": {
            "method": "lbfgs", "history": 10, "gradient_tolerance": 1e-12,
            "loss_tolerance": 0.0, "max_iterations": iterations
        },
        "fusion": {"k": 5, "theta": 0.05, "theta_plus": 0.05}
    });
    let path = dir.join("pipeline.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "").unwrap();
    let out = run(&["synth", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(code(&run(&["synth"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn synth_is_byte_identical_and_manifest_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["synth", "--config", path_str(&cfg), "--seed", "5", "--out", path_str(d)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = read_manifest(&a).unwrap();
    let mut listed: Vec<PathBuf> = manifest
        .entries()
        .flat_map(|e| [e.noisy.clone(), e.clean.clone()])
        .collect();
    listed.push(PathBuf::from("manifest.json"));
    listed.sort();
    let mut on_disk = Vec::new();
    for split in ["train", "validation", "test"] {
        for entry in fs::read_dir(a.join(split)).unwrap() {
            on_disk.push(PathBuf::from(split).join(entry.unwrap().file_name()));
        }
    }
    on_disk.push(PathBuf::from("manifest.json"));
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for rel in &on_disk {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel:?}");
    }
}

#[test]
fn train_in_wrong_order_names_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    let out = run(&["train", "vdrnn", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dependency") && err.contains("pdrnn"), "{err}");
}

#[test]
fn toy_pipeline_trains_refines_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let iterations = 3;
    let cfg = write_config(dir.path(), iterations);
    let cfg_s = path_str(&cfg);
    assert_eq!(code(&run(&["synth", "--config", cfg_s])), 0);

    let out = run(&["train", "vdrnn_plus", "--config", cfg_s]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pdrnn"));

    let models = dir.path().join("models");
    for (stage, ckpt, loss) in [
        ("pdrnn", "pdrnn.json", "pdrnn_loss.csv"),
        ("vdrnn", "vdrnn.json", "vdrnn_loss.csv"),
        ("vdrnn_plus", "vdrnn_plus.json", "vdrnn_plus_loss.csv"),
    ] {
        let out = run(&["train", stage, "--config", cfg_s]);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(models.join(ckpt).exists());
        let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
        let rows = fs::read_to_string(models.join(loss)).unwrap().lines().count() - 1;
        assert_eq!(rows as u64, summary["iterations"].as_u64().unwrap());
        assert!(rows >= 1 && rows <= iterations);
    }

    let manifest = read_manifest(&dir.path().join("corpus")).unwrap();
    let entry = &manifest.test[0];
    let noisy = dir.path().join("corpus").join(&entry.noisy);
    let clean = dir.path().join("corpus").join(&entry.clean);

    // raw reproduces the input.
    let raw_out = dir.path().join("raw.jsonl");
    let out = run(&["refine", "--config", cfg_s, "--variant", "raw", "--input", path_str(&noisy), "--out", path_str(&raw_out)]);
    assert_eq!(code(&out), 0);
    assert_eq!(load_sequence(&raw_out).unwrap(), load_sequence(&noisy).unwrap());

    let out = run(&["refine", "--config", cfg_s, "--variant", "bogus", "--input", path_str(&noisy)]);
    assert_eq!(code(&out), 1);

    for variant in ["sknnkf", "kf", "sknn"] {
        let refined = dir.path().join(format!("{variant}.jsonl"));
        let out = run(&["refine", "--config", cfg_s, "--variant", variant, "--input", path_str(&noisy), "--out", path_str(&refined)]);
        assert_eq!(code(&out), 0, "{variant}: {}", String::from_utf8_lossy(&out.stderr));

        let hist = dir.path().join(format!("{variant}_hist.csv"));
        let out = run(&["eval", "--pred", path_str(&refined), "--truth", path_str(&clean), "--out", path_str(&hist)]);
        assert_eq!(code(&out), 0);
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        let direct = evaluate(&load_sequence(&refined).unwrap(), &load_sequence(&clean).unwrap()).unwrap();
        assert_eq!(report["ape"].as_f64().unwrap(), direct.ape);
        assert_eq!(report["aje"].as_f64().unwrap(), direct.aje);
        let csv = fs::read_to_string(&hist).unwrap();
        assert_eq!(csv.lines().count(), 1 + direct.histogram.len());
    }
}

#[test]
fn eval_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    assert_eq!(code(&run(&["synth", "--config", path_str(&cfg)])), 0);
    let manifest = read_manifest(&dir.path().join("corpus")).unwrap();
    let clean = dir.path().join("corpus").join(&manifest.train[0].clean);

    let out = run(&["eval", "--pred", path_str(&clean), "--truth", path_str(&clean)]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ape"].as_f64(), Some(0.0));
    assert_eq!(report["aje"].as_f64(), Some(0.0));
    assert!(report["histogram"].as_array().unwrap().iter().all(|b| b.as_f64() == Some(0.0)));

    let full = fs::read_to_string(&clean).unwrap();
    let short = dir.path().join("short.jsonl");
    let keep = full.lines().count() - 5;
    let text: String = full.lines().take(keep).map(|l| format!("{l}\n")).collect();
    fs::write(&short, text).unwrap();
    let out = run(&["eval", "--pred", path_str(&short), "--truth", path_str(&clean)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["eval", "--pred", path_str(&missing), "--truth", path_str(&missing)]);
    assert_eq!(code(&out), 2);
}
