use std::path::Path;
use std::process::{Command, Output};

fn bvcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn generate(dir: &Path, name: &str, items: &str, classes: &str) {
    let out = bvcast(
        dir,
        &[
            "generate", "--items", items, "--features", "2", "--classes", classes, "--bayes-error", "0.05",
            "--separation", "2", "--seed", "9", "--out", name,
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn two_datasets_three_learners_ten_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a.csv", "300", "2");
    generate(d, "b.csv", "320", "3");
    let out = bvcast(
        d,
        &[
            "decompose", "--data", "a.csv", "--data", "b.csv", "--learners", "gnb,stump,knn:k=3",
            "--grid", "20:200:20", "--folds", "4", "--repeats", "3", "--seed", "1", "--out", "run",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = d.join("run/records.jsonl");
    assert_eq!(lines(&records), 66);

    let out = bvcast(d, &["build", "run/records.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("run/registry.json").exists());
    // Header plus one row per grid size.
    assert_eq!(lines(&d.join("run/r2_by_n.csv")), 11);

    let out = bvcast(
        d,
        &["predict", "--registry", "run/registry.json", "run/records.jsonl", "--n", "200", "--out", "pred"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("pred/forecasts.json").exists());
    assert!(d.join("pred/evaluation.json").exists());
    // 6 cells, 4 predicted quantities each, plus header.
    assert_eq!(lines(&d.join("pred/evaluation.csv")), 25);

    let out = bvcast(d, &["curves", "run/records.jsonl", "--out", "records.csv"]);
    assert!(out.status.success());
    assert_eq!(lines(&d.join("records.csv")), 67);
    let out = bvcast(d, &["curves", "pred/forecasts.json"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
}

#[test]
fn multi_option_learner_spec_survives_the_list() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a.csv", "200", "2");
    let out = bvcast(
        d,
        &[
            "decompose", "--data", "a.csv", "--learners", "bag:count=3,depth=2,gnb", "--grid", "50,100",
            "--folds", "3", "--repeats", "2", "--out", "run",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("run/records.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("\"learner\":\"bag:count=3,depth=2\""));
}

#[test]
fn ensemble_command_writes_forecast_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "a.csv", "400", "2");
    let args = [
        "ensemble", "--data", "a.csv", "--ensemble", "ens:plurality[gnb|stump|knn:k=1]", "--grid", "100:300:50",
        "--folds", "4", "--repeats", "3", "--observe", "--out", "ens",
    ];
    let out = bvcast(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = std::fs::read_dir(d.join("ens"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json"))
        .unwrap();
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(value["or_curve"].as_array().unwrap().len(), 5);
    assert!(value["observed_final"].is_object());
    let csv = json.with_extension("csv");
    assert_eq!(
        std::fs::read_to_string(csv).unwrap().lines().next().unwrap(),
        "n,or,err_mean,err_std,model_err,model_band_lo,model_band_hi"
    );
    // A second run leaves the existing result alone.
    let before = std::fs::read(&json).unwrap();
    assert!(bvcast(d, &args).status.success());
    assert_eq!(std::fs::read(&json).unwrap(), before);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Unreadable input.
    let out = bvcast(d, &["build", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown learner.
    generate(d, "a.csv", "200", "2");
    let out = bvcast(d, &["decompose", "--data", "a.csv", "--learners", "svm", "--grid", "50,100"]);
    assert_eq!(out.status.code(), Some(2));
    // Grid larger than the dataset.
    let out = bvcast(d, &["decompose", "--data", "a.csv", "--learners", "gnb", "--grid", "50,500"]);
    assert_eq!(out.status.code(), Some(2));

    // A single cell cannot support a pooled fit.
    let out = bvcast(
        d,
        &[
            "decompose", "--data", "a.csv", "--learners", "gnb", "--grid", "50,100", "--folds", "3", "--repeats",
            "2", "--out", "one",
        ],
    );
    assert!(out.status.success());
    let out = bvcast(d, &["build", "one/records.jsonl"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn curves_of_empty_record_file_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = bvcast(dir.path(), &["curves", "empty.jsonl"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}
