use std::process::Command;

fn normalign(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_normalign")).args(args).env_remove("SOURCE_DATE_EPOCH").output().unwrap()
}

#[test]
fn score_without_matches_exits_with_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = normalign(&["--data-dir", dir.path().to_str().unwrap(), "score"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("matches.jsonl is missing; run `normalign match` first"), "{err}");
}

#[test]
fn validate_reports_dangling_references() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("solutions.jsonl"),
        r#"{"id":"m:d9:a0","dilemma_id":"d9","agent_id":"m","text":"Ring","stance":"advised","negation_flipped":false,"source_response_id":"m:d9"}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("dilemmas.jsonl"), "").unwrap();
    let out = normalign(&["--data-dir", dir.path().to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8(out.stderr).unwrap().contains("solution m:d9:a0 references unknown dilemma d9"));
}

#[test]
fn unknown_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("dilemmas.jsonl"),
        r#"{"id":"d","episode_id":"e","summary":"s","body":"b","question":"q"}"#,
    )
    .unwrap();
    let out = normalign(&["--data-dir", dir.path().to_str().unwrap(), "--backend", "nowhere", "respond", "--agent", "x"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["ingest", "respond", "extract", "match", "score", "report", "serve", "validate"] {
        let out = normalign(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
    }
}
