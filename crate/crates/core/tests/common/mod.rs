#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use normalign::cli::{run, Cli};

pub const NOW: &str = "2024-06-01T00:00:00Z";
pub const GOLDEN_FILES: [&str; 4] = ["dilemmas.jsonl", "solutions.jsonl", "matches.jsonl", "report.json"];

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("toy")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs one CLI command against the toy config.
pub fn cli(data: &Path, parallelism: usize, args: &[&str]) -> Result<serde_json::Value, normalign::pipeline::PipelineError> {
    let config = toy_dir().join("config.toml");
    let mut argv: Vec<String> = vec!["normalign".into()];
    argv.extend(
        [
            "--config",
            config.to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
            "--now",
            NOW,
            "--parallelism",
            &parallelism.to_string(),
        ]
        .map(String::from),
    );
    argv.extend(args.iter().map(|s| s.to_string()));
    run(Cli::try_parse_from(argv).expect("valid arguments"))
}

/// The full toy run: ingest, two agents, extract, match both, score.
pub fn run_toy(data: &Path, parallelism: usize) {
    std::fs::create_dir_all(data).unwrap();
    std::fs::copy(toy_dir().join("transcripts.jsonl"), data.join("transcripts.jsonl")).unwrap();
    let topics = toy_dir().join("topics.csv");
    let steps: [&[&str]; 7] = [
        &["ingest"],
        &["respond", "--agent", "alpha"],
        &["respond", "--agent", "beta"],
        &["extract"],
        &["match", "--cand", "alpha"],
        &["match", "--cand", "beta"],
        &["score", "--topics", topics.to_str().unwrap()],
    ];
    for step in steps {
        cli(data, parallelism, step).unwrap_or_else(|e| panic!("{step:?}: {e}"));
    }
}

pub fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(file).display()))
}

use normalign::model::{CmrVerdict, Dilemma, MatchJudgment, MatchMatrix, Solution, Stance};

pub fn toy_dilemma(id: &str) -> Dilemma {
    Dilemma {
        id: id.into(),
        episode_id: "e".into(),
        summary: "s".into(),
        body: "b".into(),
        question: "q".into(),
    }
}

pub fn solution(dilemma: &str, agent: &str, i: usize, text: &str, stance: Stance) -> Solution {
    Solution {
        id: format!("{agent}:{dilemma}:s{i}"),
        dilemma_id: dilemma.into(),
        agent_id: agent.into(),
        text: text.into(),
        stance,
        negation_flipped: false,
        source_response_id: format!("{agent}:{dilemma}"),
    }
}

pub fn stance(advised: bool) -> Stance {
    if advised {
        Stance::Advised
    } else {
        Stance::NotAdvised
    }
}

/// A random-shaped matrix: `bits[i * n_ref + j]` says whether candidate i
/// matches reference j.
#[derive(Clone, Debug)]
pub struct MatrixSpec {
    pub cand: Vec<Stance>,
    pub refs: Vec<Stance>,
    pub bits: Vec<bool>,
}

impl MatrixSpec {
    pub fn solutions(&self) -> (Vec<Solution>, Vec<Solution>) {
        let c = self.cand.iter().enumerate().map(|(i, &s)| solution("d", "m", i, &format!("c{i}"), s)).collect();
        let r = self.refs.iter().enumerate().map(|(i, &s)| solution("d", "panel", i, &format!("r{i}"), s)).collect();
        (c, r)
    }

    pub fn matrix(&self) -> MatchMatrix {
        let (c, r) = self.solutions();
        let mut m = MatchMatrix::new("d", c.iter().map(|s| s.id.clone()).collect(), r.iter().map(|s| s.id.clone()).collect());
        for (i, cs) in c.iter().enumerate() {
            for (j, rs) in r.iter().enumerate() {
                m.insert(MatchJudgment::new(cs, rs, CmrVerdict::all(self.bits[i * r.len() + j], ""))).unwrap();
            }
        }
        m
    }

    /// Appends `k` candidates that match nothing.
    pub fn padded(&self, k: usize, stance_of: impl Fn(usize) -> Stance) -> MatrixSpec {
        let mut out = self.clone();
        for i in 0..k {
            out.cand.push(stance_of(i));
            out.bits.extend(std::iter::repeat_n(false, self.refs.len()));
        }
        out
    }

    pub fn flipped(&self) -> MatrixSpec {
        MatrixSpec { cand: self.cand.iter().map(|s| s.flip()).collect(), ..self.clone() }
    }
}
