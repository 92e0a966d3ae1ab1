use std::process::{Command, Output};

fn memdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memdec")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_unknown_subcommand() {
    assert_eq!(memdec(&["--help"]).status.code(), Some(0));
    assert_eq!(memdec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(memdec(&[]).status.code(), Some(1));
}

#[test]
fn lambda_violation_is_a_usage_error() {
    let o = memdec(&[
        "count-params",
        "--lambda1",
        "0.2",
        "--lambda3",
        "0.2",
        "--lambda5",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sum to 1"), "{}", stderr(&o));
}

#[test]
fn missing_required_path_is_a_usage_error() {
    let o = memdec(&["generate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    assert!(memdec(&["make-toy-data", "--out", root]).status.success());
    let config = dir.path().join("config.json");
    let o = memdec(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.mdck"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"decoder": {"n": 8}, "learning_rate": 1}"#).unwrap();
    let o = memdec(&["count-params", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn count_params_reports_both_models() {
    let o = memdec(&["count-params"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("memory 4393848 < lstm 6549704"), "{out}");
    assert!(out.contains("layer5.wg"), "{out}");
}

#[test]
fn corrupt_feature_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    assert!(memdec(&["make-toy-data", "--out", root]).status.success());
    let feature = std::fs::read_dir(dir.path().join("features"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    std::fs::write(&feature, b"NOPE").unwrap();
    let config = dir.path().join("config.json");
    let o = memdec(&["train", "--config", config.to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
