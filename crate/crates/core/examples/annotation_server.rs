//! Builds annotation tasks from a toy run, starts the API on a free port,
//! labels eight match-pair tasks through HTTP and prints the agreement stats.
//!
//!     cargo run --example annotation_server

use std::sync::Arc;

use clap::Parser;
use normalign::annotation::{serve, AnnotationStore, AnnotationTask, Taxonomy};
use normalign::cli::{run, Cli};
use normalign::pipeline::{prepare_tasks, Settings, TaskOptions, Workspace, LABELS};

fn main() {
    let toy = concat!(env!("CARGO_MANIFEST_DIR"), "/toy");
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(format!("{toy}/transcripts.jsonl"), dir.path().join("transcripts.jsonl")).unwrap();
    let data = dir.path().to_str().unwrap();
    let config = format!("{toy}/config.toml");
    for step in [&["ingest"][..], &["respond", "--agent", "alpha"], &["extract"], &["match", "--cand", "alpha"]] {
        let mut argv = vec!["normalign", "--config", &config, "--data-dir", data];
        argv.extend_from_slice(step);
        run(Cli::parse_from(argv)).unwrap();
    }

    let ws = Workspace::new(dir.path());
    let st = Settings::new(normalign::client::BackendRegistry::new(Default::default(), None));
    let tasks = prepare_tasks(&ws, &st, &Taxonomy::bundled(), TaskOptions { per_cell: 2, overlap: 4, rebuild: false }).unwrap();
    println!("{} tasks", tasks.len());
    let store = Arc::new(AnnotationStore::open(tasks, ws.path(LABELS)).unwrap());

    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(serve(store, "127.0.0.1:0".parse().unwrap(), None, |a| tx.send(a).unwrap())).unwrap();
    });
    let base = format!("http://{}", rx.recv().unwrap());
    println!("serving on {base}");

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    for i in 0..8 {
        let mut r = agent.get(format!("{base}/api/tasks/next?annotator=ann1&kind=match_pair")).call().unwrap();
        if r.status() == 204 {
            println!("queue empty after {i} labels");
            break;
        }
        let task: AnnotationTask = r.body_mut().read_json().unwrap();
        let (label, issues): (&str, Vec<&str>) = if i % 4 == 3 { ("incorrect", vec!["Missed match"]) } else { ("correct", vec![]) };
        let body = serde_json::json!({"task_id": task.task_id, "annotator_id": "ann1", "label": label, "issues": issues});
        let r = agent.post(format!("{base}/api/labels")).send_json(body).unwrap();
        println!("{} -> {label} ({})", task.task_id, r.status());
    }
    let mut r = agent.get(format!("{base}/api/stats?kind=match_pair")).call().unwrap();
    let stats: serde_json::Value = r.body_mut().read_json().unwrap();
    println!("{}", serde_json::to_string_pretty(&stats).unwrap());
}
