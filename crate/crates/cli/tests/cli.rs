use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_adbn");

fn adbn(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = adbn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32) -> String {
    let out = adbn(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

/// Writes a 200-sample image tree and a short training config for it.
fn small_dataset(dir: &Path) {
    ok(dir, &["synth", "--out", "data", "--n", "200", "--side", "16", "--seed", "2"]);
    let text = fs::read_to_string(dir.join("data/config.toml")).unwrap();
    let text = text
        .replace("epochs_per_layer = 100", "epochs_per_layer = 15")
        .replace("epochs = 200", "epochs = 40");
    fs::write(dir.join("data/config.toml"), text).unwrap();
}

fn cracked_files(dir: &Path) -> usize {
    ["train", "test"]
        .iter()
        .map(|s| fs::read_dir(dir.join("data").join(s).join("D/CD")).unwrap().count())
        .sum()
}

fn count(stdout: &str, prefix: &str) -> usize {
    let line = stdout.lines().find(|l| l.starts_with(prefix)).unwrap();
    line[prefix.len()..].split('/').next().unwrap().trim().parse().unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    assert_eq!(cracked_files(dir), 100);

    let stdout = ok(dir, &["train", "--config", "data/config.toml", "--out", "run", "--fine-tune"]);
    assert!(stdout.contains("overall"));
    for name in ["checkpoint.json", "metrics.csv", "config.toml", "structure.txt", "report.txt", "report.json"] {
        assert!(dir.join("run").join(name).is_file(), "{name}");
    }
    let checkpoint: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/checkpoint.json")).unwrap()).unwrap();
    let recorded = checkpoint["metrics"]["train_misclassified"].as_u64().unwrap() as usize;
    let test_recorded = checkpoint["metrics"]["test_misclassified"].as_u64().unwrap() as usize;

    let eval = ok(
        dir,
        &["evaluate", "--checkpoint", "run/checkpoint.json", "--split", "train", "--fine-tune", "--out", "eval"],
    );
    assert_eq!(count(&eval, "misclassified:"), recorded);
    assert!(eval.contains("% ("));
    assert!(dir.join("eval/report.json").is_file());

    let inspect = ok(dir, &["inspect", "--checkpoint", "run/checkpoint.json"]);
    let layers: usize = inspect.lines().find_map(|l| l.strip_prefix("layers: ")).unwrap().parse().unwrap();
    let hidden = checkpoint["model"]["layers"].as_array().unwrap();
    assert_eq!(layers, hidden.len());
    assert_eq!(inspect.matches(" neurons").count(), layers);

    let export = ok(dir, &["export-misclassified", "--checkpoint", "run/checkpoint.json", "--out", "audit", "--fine-tune"]);
    assert!(export.starts_with(&format!("{test_recorded} of ")));
    let mut manifest = csv::Reader::from_path(dir.join("audit/audit.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = manifest.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), test_recorded);
    for row in &rows {
        assert!(dir.join("audit").join(&row[5]).is_file());
    }

    // predictions agree with the test-split evaluation
    let images: Vec<String> = ["CD", "UD"]
        .iter()
        .flat_map(|c| fs::read_dir(dir.join("data/test/D").join(c)).unwrap())
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["predict", "--checkpoint", "run/checkpoint.json", "--fine-tune"];
    args.extend(images.iter().map(String::as_str));
    let predictions = ok(dir, &args);
    let wrong = predictions
        .lines()
        .filter(|l| {
            let fields: Vec<&str> = l.split('\t').collect();
            let truth = if fields[0].contains("/CD/") { "cracked" } else { "uncracked" };
            fields[1] != truth
        })
        .count();
    assert_eq!(predictions.lines().count(), images.len());
    assert_eq!(wrong, test_recorded);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "a", "--seed", "9"]);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "b", "--seed", "9"]);
    let a = fs::read(dir.join("a/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(dir.join("b/metrics.csv")).unwrap());
    // the echoed config reproduces the run
    ok(dir, &["train", "--config", "a/config.toml", "--out", "c"]);
    assert_eq!(a, fs::read(dir.join("c/metrics.csv")).unwrap());
}

#[test]
fn outputs_are_never_overwritten_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "run"]);
    let before = fs::read(dir.join("run/checkpoint.json")).unwrap();
    let err = fails_with(dir, &["train", "--config", "data/config.toml", "--out", "run", "--seed", "5"], 2);
    assert!(err.contains("--force"), "{err}");
    assert_eq!(before, fs::read(dir.join("run/checkpoint.json")).unwrap());
    ok(dir, &["train", "--config", "data/config.toml", "--out", "run", "--seed", "5", "--force"]);

    fails_with(dir, &["synth", "--out", "data", "--n", "40", "--side", "16"], 2);
    ok(dir, &["synth", "--out", "data", "--n", "40", "--side", "16", "--force"]);
    assert_eq!(cracked_files(dir), 20);
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "[train.structure]\ntheta_G = -0.5\n").unwrap();
    let err = fails_with(dir, &["train", "--config", "bad.toml", "--out", "run"], 2);
    assert!(err.contains("theta_G"), "{err}");
    fs::write(dir.join("typo.toml"), "sead = 3\n").unwrap();
    fails_with(dir, &["train", "--config", "typo.toml", "--out", "run"], 2);
    assert!(!dir.join("run").exists());
}

#[test]
fn dataset_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("missing.toml"), "[data]\nkind = \"sdnet\"\nroot = \"nowhere\"\n").unwrap();
    fails_with(dir, &["train", "--config", "missing.toml"], 3);

    small_dataset(dir);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "run"]);
    fs::write(dir.join("broken.png"), b"not an image").unwrap();
    let err = fails_with(dir, &["predict", "--checkpoint", "run/checkpoint.json", "broken.png"], 3);
    assert!(err.contains("broken.png"), "{err}");

    // no images of the requested structure
    let walls = fs::read_to_string(dir.join("data/config.toml"))
        .unwrap()
        .replace("structure = \"deck\"", "structure = \"wall\"");
    fs::write(dir.join("walls.toml"), walls).unwrap();
    let err = fails_with(dir, &["evaluate", "--checkpoint", "run/checkpoint.json", "--config", "walls.toml"], 3);
    assert!(err.contains("no images"), "{err}");
}

#[test]
fn incompatible_checkpoints_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "run"]);
    let text = fs::read_to_string(dir.join("run/checkpoint.json")).unwrap();
    fs::write(dir.join("future.json"), text.replacen("\"format_version\": 1", "\"format_version\": 2", 1)).unwrap();
    let err = fails_with(dir, &["inspect", "--checkpoint", "future.json"], 5);
    assert!(err.contains("version"), "{err}");
    fs::write(dir.join("truncated.json"), &text[..text.len() / 2]).unwrap();
    fails_with(dir, &["inspect", "--checkpoint", "truncated.json"], 5);

    let wider = fs::read_to_string(dir.join("data/config.toml"))
        .unwrap()
        .replace("target_side = 16", "target_side = 24");
    fs::write(dir.join("wider.toml"), wider).unwrap();
    let err = fails_with(dir, &["evaluate", "--checkpoint", "run/checkpoint.json", "--config", "wider.toml"], 5);
    assert!(err.contains("24x24"), "{err}");
}

#[test]
fn relabels_flow_back_into_training() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "run", "--no-fine-tune"]);
    ok(dir, &["export-misclassified", "--checkpoint", "run/checkpoint.json", "--out", "audit", "--split", "train"]);
    assert!(dir.join("audit/relabels.csv").is_file());
    // the reviewer flips every flagged label to the model's prediction
    let mut manifest = csv::Reader::from_path(dir.join("audit/audit.csv")).unwrap();
    let mut writer = csv::Writer::from_path(dir.join("reviewed.csv")).unwrap();
    writer.write_record(["source", "label"]).unwrap();
    for row in manifest.records() {
        let row = row.unwrap();
        writer.write_record([&row[0], &row[2]]).unwrap();
    }
    writer.flush().unwrap();
    let eval = ok(
        dir,
        &["evaluate", "--checkpoint", "run/checkpoint.json", "--split", "train", "--relabels", "reviewed.csv"],
    );
    assert_eq!(count(&eval, "misclassified:"), 0);
    ok(dir, &["train", "--config", "data/config.toml", "--out", "retrained", "--relabels", "reviewed.csv"]);
    let config = fs::read_to_string(dir.join("retrained/config.toml")).unwrap();
    assert!(config.contains("reviewed.csv"));
}
