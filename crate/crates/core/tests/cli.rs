use std::process::Command;

fn permprompt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_permprompt"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("PERMPROMPT_ENDPOINT")
        .output()
        .unwrap()
}

#[test]
fn search_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = permprompt(&["search", "--epochs", "3", "--population", "12", "--selection", "6", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["mode"], "pero");
    for f in ["result.json", "config.json", "history.jsonl", "separator.json", "timing.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn oneshot_prints_sequence_and_trace() {
    let o = permprompt(&["oneshot", "--pair", "0,1", "--lmax", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["sequence"].as_array().unwrap().len(), 4);
    assert_eq!(v["fitness_trace"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_config_exits_two() {
    assert_eq!(permprompt(&["search", "--prompt-size", "20"]).status.code(), Some(2));
    assert_eq!(permprompt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(permprompt(&["oneshot", "--pair", "0,2"]).status.code(), Some(2));
}

#[test]
fn unreachable_service_exits_three() {
    let o = permprompt(&["search", "--oracle", "http", "--endpoint", "http://127.0.0.1:9", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn pattern_may_start_with_a_hyphen() {
    let o = permprompt(&["oneshot", "--pair", "0,1", "--pattern", "--++"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["sequence"], serde_json::json!([1, 1, 0, 0]));
}
