use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_romix");

fn romix(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file below `dir` (relative path -> bytes), skipping wall-clock timings.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "timings.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_TRAIN: &str = r#"
[train]
n_train = 20
n_eval = 6

[train.hyper.ae_train]
learning_rate = 5e-4
max_epochs = 200
target_loss = 5e-6
weight_decay = 0.0
seed = 0
"#;

fn generate_small(dir: &Path) -> PathBuf {
    ok(&romix(&["generate", "--case", "moving_front", "--n", "30", "--nx", "40", "--seed", "7", "--out", "data"], dir));
    dir.join("data/snapshots.json")
}

#[test]
fn generate_writes_data_config_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    generate_small(tmp.path());
    let data = tmp.path().join("data");
    let snaps: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("snapshots.json")).unwrap()).unwrap();
    assert_eq!(snaps["fields"].as_array().unwrap().len(), 30);
    assert_eq!(snaps["grid"].as_array().unwrap().len(), 40);
    let m = manifest(&data);
    assert_eq!(m["command"], "generate");
    assert_eq!(m["master_seed"], 7);
    assert!(m["seeds"]["dataset"].is_u64());
    let cfg = fs::read_to_string(data.join("config.toml")).unwrap();
    assert!(cfg.contains("seed = 7") && cfg.contains("case = \"moving_front\""));
}

#[test]
fn generate_csv_format() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&romix(&["generate", "--case", "smooth_family", "--n", "5", "--nx", "8", "--format", "csv", "--out", "d"], tmp.path()));
    assert!(tmp.path().join("d/snapshots.csv").exists());
    assert!(tmp.path().join("d/snapshots.grid.csv").exists());
}

#[test]
fn missing_required_inputs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cases: [&[&str]; 5] = [
        &["generate", "--case", "moving_front"],
        &["generate", "--out", "x"],
        &["train", "--out", "x"],
        &["aggregate", "--data", "d.json", "--out", "x"],
        &["report", "--out", "x"],
    ];
    for args in cases {
        let out = romix(args, dir);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    }
    assert!(!dir.join("x").exists());
}

#[test]
fn bad_values_and_unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(romix(&["generate", "--case", "vortex", "--out", "x"], dir).status.code(), Some(2));
    fs::write(dir.join("bad.toml"), "[generate]\ncase = \"moving_front\"\ncolour = 1\n").unwrap();
    let out = romix(&["generate", "--config", "bad.toml", "--out", "x"], dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("g.toml"), "seed = 3\n[generate]\ncase = \"smooth_family\"\nn = 12\nnx = 16\n").unwrap();
    ok(&romix(&["generate", "--config", "g.toml", "--nx", "20", "--out", "a"], dir));
    let snaps: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("a/snapshots.json")).unwrap()).unwrap();
    assert_eq!(snaps["fields"].as_array().unwrap().len(), 12);
    assert_eq!(snaps["grid"].as_array().unwrap().len(), 20);
    assert_eq!(manifest(&dir.join("a"))["master_seed"], 3);
    // the resolved config reproduces the run
    ok(&romix(&["generate", "--config", "a/config.toml", "--out", "b"], dir));
    assert_eq!(tree(&dir.join("a")), tree(&dir.join("b")));
}

#[test]
fn generate_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["a", "b"] {
        ok(&romix(&["generate", "--case", "moving_front", "--n", "20", "--nx", "30", "--noise", "0.01", "--seed", "5", "--out", out], dir));
    }
    assert_eq!(tree(&dir.join("a")), tree(&dir.join("b")));
    ok(&romix(&["generate", "--case", "moving_front", "--n", "20", "--nx", "30", "--noise", "0.01", "--seed", "6", "--out", "c"], dir));
    assert_ne!(fs::read(dir.join("a/snapshots.json")).unwrap(), fs::read(dir.join("c/snapshots.json")).unwrap());
}

#[test]
fn train_aggregate_pipeline_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate_small(dir);
    fs::write(dir.join("t.toml"), SMALL_TRAIN).unwrap();
    for out in ["roms_a", "roms_b"] {
        let args = ["train", "--config", "t.toml", "--data", "data/snapshots.json", "--models", "pod-rbf,ae-rbf,pod-gpr"];
        ok(&romix(&[&args[..], &["--latent-dim", "3", "--seed", "7", "--out", out]].concat(), dir));
    }
    let roms = dir.join("roms_a");
    for name in ["pod-rbf", "ae-rbf", "pod-gpr"] {
        assert!(roms.join("roms").join(name).join("spec.json").exists(), "{name}");
    }
    assert!(manifest(&roms)["seeds"]["reducer-ae"].is_u64());
    assert_eq!(tree(&roms), tree(&dir.join("roms_b")));

    for (out, mixture) in [("mix_a", "two-best"), ("mix_b", "two-best"), ("mix_c", "rbf-pair")] {
        let args = ["aggregate", "--data", "data/snapshots.json", "--roms", "roms_a", "--mixture", mixture];
        ok(&romix(&[&args[..], &["--seed", "7", "--out", out]].concat(), dir));
    }
    assert!(dir.join("mix_a/mixture/mixture.json").exists());
    assert_eq!(tree(&dir.join("mix_a")), tree(&dir.join("mix_b")));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("mix_c/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["components"], serde_json::json!(["pod-rbf", "ae-rbf"]));
    assert!(manifest(&dir.join("mix_c"))["seeds"]["forest-rbf-pair"].is_u64());
}

#[test]
fn failing_model_is_reported_and_exit_is_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate_small(dir);
    fs::write(dir.join("t.toml"), SMALL_TRAIN.replace("learning_rate = 5e-4", "learning_rate = -1.0")).unwrap();
    let out = romix(
        &["train", "--config", "t.toml", "--data", "data/snapshots.json", "--models", "pod-rbf,ae-rbf", "--out", "r"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ae-rbf") && !stderr.contains("pod-rbf"), "{stderr}");
    // the successful model is still written
    assert!(dir.join("r/roms/pod-rbf/spec.json").exists());
    assert!(!dir.join("r/roms/ae-rbf").exists());
}

#[test]
fn report_writes_files_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("r.toml"), "[report]\nn_train = 20\nn_eval = 6\nn_test = 4\n").unwrap();
    for out in ["a", "b"] {
        let args = ["report", "--config", "r.toml", "--case", "moving_front", "--n", "30", "--nx", "40"];
        let rest = ["--latent-dim", "2", "--models", "pod-rbf,pod-gpr", "--mixture", "two-best", "--seed", "1", "--out", out];
        ok(&romix(&[&args[..], &rest[..]].concat(), dir));
    }
    let a = dir.join("a");
    for f in ["report.json", "errors.csv", "config.toml", "manifest.json", "timings.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert!(fs::read_dir(&a).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("weights_two-best")));
    let m = manifest(&a);
    assert!(m["seeds"]["forest-two-best"].is_u64() && m["seeds"]["split"].is_u64());
    assert_eq!(tree(&a), tree(&dir.join("b")));
}
