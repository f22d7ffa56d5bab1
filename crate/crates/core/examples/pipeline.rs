//! Runs the bundled toy corpus through every stage into a temporary data
//! directory and prints the aggregate scores.
//!
//!     cargo run --example pipeline

use clap::Parser;
use normalign::cli::{run, Cli};

fn main() {
    let toy = concat!(env!("CARGO_MANIFEST_DIR"), "/toy");
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(format!("{toy}/transcripts.jsonl"), dir.path().join("transcripts.jsonl")).unwrap();
    let data = dir.path().to_str().unwrap();
    let config = format!("{toy}/config.toml");
    let topics = format!("{toy}/topics.csv");
    let steps: [&[&str]; 9] = [
        &["ingest"],
        &["respond", "--agent", "alpha"],
        &["respond", "--agent", "beta"],
        &["extract"],
        &["match", "--cand", "alpha"],
        &["match", "--cand", "beta"],
        &["score", "--topics", &topics],
        &["report"],
        &["validate"],
    ];
    for step in steps {
        let mut argv = vec!["normalign", "--config", &config, "--data-dir", data, "--now", "2024-06-01T00:00:00Z"];
        argv.extend_from_slice(step);
        let out = run(Cli::parse_from(argv)).unwrap_or_else(|e| panic!("{step:?}: {e}"));
        println!("{:<10} {out}", step[0]);
    }
    println!("\n{}", std::fs::read_to_string(dir.path().join("report_aggregate.csv")).unwrap());
}
