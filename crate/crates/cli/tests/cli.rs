use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sample(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/samples").join(name)
}

fn vigp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vigp")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn final_accuracy(trace: &Path) -> f64 {
    let text = std::fs::read_to_string(trace).unwrap();
    text.lines().filter_map(|l| l.split(',').nth(3)).rfind(|a| !a.is_empty()).unwrap().parse().unwrap()
}

fn strip_wall_seconds(trace: &Path) -> Vec<String> {
    std::fs::read_to_string(trace)
        .unwrap()
        .lines()
        .map(|l| l.split_once(',').map(|(_, rest)| rest.to_string()).unwrap_or_default())
        .collect()
}

#[test]
fn train_on_blobs_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = vigp(&[
        "train", "--data", path_str(&sample("blobs.csv")), "--m", "5", "--strategy", "vi_jj", "--out", path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = dir.path().join("blobs_vi_jj.model");
    assert!(model.exists());
    let trace = dir.path().join("blobs_vi_jj.csv");
    assert!(final_accuracy(&trace) >= 0.95);

    let eval = vigp(&["evaluate", "--model", path_str(&model), "--data", path_str(&sample("blobs.csv"))]);
    assert!(eval.status.success());
    let stdout = String::from_utf8(eval.stdout).unwrap();
    let acc: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(acc >= 0.95, "{stdout}");
}

#[test]
fn evaluate_with_wrong_dimension_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = vigp(&["train", "--data", path_str(&sample("blobs.csv")), "--m", "5", "--out", path_str(dir.path())]);
    assert!(out.status.success());
    let model = dir.path().join("blobs_vi_jj.model");
    let eval = vigp(&["evaluate", "--model", path_str(&model), "--data", path_str(&sample("cod-rna.txt"))]);
    assert!(!eval.status.success());
    let err = String::from_utf8(eval.stderr).unwrap();
    assert!(err.contains("8 features") && err.contains("expects 2"), "{err}");
}

#[test]
fn benchmark_writes_one_trace_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = vigp(&[
        "benchmark",
        "--data",
        path_str(&sample("blobs.csv")),
        "--m",
        "5",
        "--strategies",
        "vi_jj,vi_taylor,vi_jj_hybrid",
        "--max-epochs",
        "30",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut traces: Vec<PathBuf> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    traces.sort();
    assert_eq!(traces.len(), 3);
    for t in &traces {
        let first = std::fs::read_to_string(t).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, "wall_seconds,outer_iter,elbo,accuracy");
    }
    let names: Vec<_> = traces.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["blobs_vi_jj.csv", "blobs_vi_jj_hybrid.csv", "blobs_vi_taylor.csv"]);
}

#[test]
fn reruns_match_except_wall_clock() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let data = sample("blobs.csv");
    for (dir, parallel) in [(&a, false), (&b, true)] {
        let mut args = vec![
            "benchmark",
            "--data",
            path_str(&data),
            "--m",
            "6",
            "--strategies",
            "vi_jj_full,svi_adadelta",
            "--step-rates",
            "0.5,1",
            "--max-epochs",
            "15",
            "--seed",
            "3",
            "--out",
            path_str(dir.path()),
        ];
        if parallel {
            args.push("--parallel");
        }
        assert!(vigp(&args).status.success());
    }
    for name in ["blobs_vi_jj_full.csv", "blobs_svi_adadelta_lr0.5.csv", "blobs_svi_adadelta_lr1.csv"] {
        assert_eq!(strip_wall_seconds(&a.path().join(name)), strip_wall_seconds(&b.path().join(name)), "{name}");
    }
}

#[test]
fn environment_overrides_and_json_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vigp"))
        .args(["train", "--data", path_str(&sample("blobs.csv")), "--out", path_str(dir.path())])
        .env("VIGP_M", "4")
        .env("VIGP_STRATEGY", "vi_taylor")
        .env("VIGP_TRACE_FORMAT", "json")
        .env("VIGP_MAX_EPOCHS", "10")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("blobs_vi_taylor.json")).unwrap()).unwrap();
    assert_eq!(json["strategy"], "vi_taylor");
    assert!(json["records"].as_array().unwrap().len() <= 11);
    assert!(json["records"][0]["log_theta"].as_array().unwrap().len() >= 2);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = vigp(&["train", "--data", "/nonexistent/file.csv", "--out", path_str(dir.path())]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));
    let bad_m = vigp(&["train", "--data", path_str(&sample("blobs.csv")), "--m", "0", "--out", path_str(dir.path())]);
    assert!(!bad_m.status.success());
    let bad_strategy =
        vigp(&["train", "--data", path_str(&sample("blobs.csv")), "--strategy", "newton", "--out", path_str(dir.path())]);
    assert!(!bad_strategy.status.success());
    assert!(String::from_utf8_lossy(&bad_strategy.stderr).contains("newton"));
}

#[test]
fn label_mapped_csv_sample_trains() {
    let dir = tempfile::tempdir().unwrap();
    let out = vigp(&[
        "train",
        "--data",
        path_str(&sample("magic04.data")),
        "--format",
        "csv",
        "--label-map",
        "g,h",
        "--m",
        "3",
        "--test-fraction",
        "0.25",
        "--max-epochs",
        "5",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("magic04_vi_jj.model").exists());
}
