//! Command-line front end over [`crate::pipeline`].

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::annotation::{self, AnnotationStore, Taxonomy};
use crate::client::{BackendRegistry, ClientConfig, DiskCache};
use crate::corpus::Ceiling;
use crate::lexicon::Language;
use crate::metrics::AggregateMode;
use crate::pipeline::{self, IngestOptions, PipelineError, Settings, TaskOptions, Workspace};
use crate::template::TemplateSet;

#[derive(Debug, Parser)]
#[command(name = "normalign", version, about = "Social-norm alignment pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Backend configuration (TOML). Optional for stages that call no model.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Backend for this stage's model calls, overriding the config.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true, default_value_t = 4)]
    pub parallelism: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Process at most N items (episodes for ingest, dilemmas elsewhere).
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    #[arg(long, global = true, default_value = "da")]
    pub lang: Language,
    /// Timestamp for new records (RFC 3339). Falls back to SOURCE_DATE_EPOCH, then the clock.
    #[arg(long, global = true)]
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcripts → dilemmas.jsonl, audit.jsonl and panel sections.
    Ingest {
        #[arg(long, default_value_t = 3)]
        chunk_size: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Fixed section-length ceiling in sentences.
        #[arg(long, conflicts_with_all = ["ceiling_percentile", "no_ceiling"])]
        ceiling: Option<usize>,
        #[arg(long, default_value_t = 95)]
        ceiling_percentile: u32,
        #[arg(long)]
        no_ceiling: bool,
    },
    /// Ask one agent every dilemma.
    Respond {
        #[arg(long)]
        agent: String,
    },
    /// Responses → solutions.jsonl.
    Extract,
    /// Judge candidate solutions against reference solutions.
    Match {
        #[arg(long)]
        cand: String,
        #[arg(long = "ref", default_value = "panel")]
        reference: String,
    },
    /// Matches → report.json.
    Score {
        #[arg(long, default_value = "macro")]
        mode: AggregateMode,
        #[arg(long)]
        topics: Option<PathBuf>,
    },
    /// report.json → CSV tables.
    Report,
    /// Annotation API and UI.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Built UI bundle; defaults to <data-dir>/ui when present.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        per_cell: usize,
        /// Tasks per kind shown to two annotators.
        #[arg(long, default_value_t = 25)]
        overlap: usize,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        rebuild_tasks: bool,
    },
    /// Referential checks over the data directory.
    Validate,
}

fn resolve_now(flag: Option<DateTime<Utc>>) -> Result<DateTime<Utc>, PipelineError> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, 0))
            .ok_or_else(|| PipelineError::Config(format!("SOURCE_DATE_EPOCH={v:?} is not a unix timestamp"))),
        Err(_) => Ok(Utc::now()),
    }
}

fn settings(g: &GlobalArgs) -> Result<Settings, PipelineError> {
    let config = match &g.config {
        Some(p) => ClientConfig::load(p)?,
        None => {
            let default = PathBuf::from("normalign.toml");
            if default.exists() {
                ClientConfig::load(&default)?
            } else {
                ClientConfig::default()
            }
        }
    };
    let templates = match &config.templates_dir {
        Some(d) => TemplateSet::with_overrides(&config.resolve(d)).map_err(|e| PipelineError::Config(e.to_string()))?,
        None => TemplateSet::bundled(),
    };
    let cache = config.cache_dir.as_ref().map(|d| Arc::new(DiskCache::new(config.resolve(d))));
    Ok(Settings {
        registry: BackendRegistry::new(config, cache),
        templates,
        backend_override: g.backend.clone(),
        parallelism: g.parallelism.max(1),
        limit: g.limit,
        seed: g.seed,
        now: resolve_now(g.now)?,
        lang: g.lang,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

/// Runs one command and returns a JSON summary for stdout.
pub fn run(cli: Cli) -> Result<Value, PipelineError> {
    let ws = Workspace::new(&cli.global.data_dir);
    let st = settings(&cli.global)?;
    match cli.command {
        Command::Ingest { chunk_size, stride, ceiling, ceiling_percentile, no_ceiling } => {
            let ceiling = match (ceiling, no_ceiling) {
                (_, true) => Ceiling::None,
                (Some(n), _) => Ceiling::Fixed(n),
                (None, false) => Ceiling::Percentile(ceiling_percentile),
            };
            Ok(to_value(&pipeline::ingest(&ws, &st, IngestOptions { chunk_size, stride, ceiling })?))
        }
        Command::Respond { agent } => Ok(to_value(&pipeline::respond(&ws, &st, &agent)?)),
        Command::Extract => Ok(to_value(&pipeline::extract(&ws, &st)?)),
        Command::Match { cand, reference } => Ok(to_value(&pipeline::match_stage(&ws, &st, &cand, &reference)?)),
        Command::Score { mode, topics } => {
            let r = pipeline::score(&ws, &st, mode, topics.as_deref())?;
            let headline: serde_json::Map<String, Value> = r
                .aggregate
                .iter()
                .map(|(agent, a)| {
                    let g = if mode == AggregateMode::Macro { &a.macro_ } else { &a.micro };
                    (agent.clone(), to_value(g))
                })
                .collect();
            Ok(json!({ "report": ws.path(pipeline::REPORT), "aggregate": headline }))
        }
        Command::Report => Ok(json!({ "written": pipeline::report_csv(&ws)? })),
        Command::Validate => {
            let v = pipeline::validate(&ws)?;
            if v.is_empty() {
                Ok(json!({ "violations": [] }))
            } else {
                Err(PipelineError::Data(format!(
                    "{} violation(s):\n{}",
                    v.len(),
                    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
                )))
            }
        }
        Command::Serve { port, host, static_dir, per_cell, overlap, taxonomy, rebuild_tasks } => {
            let taxonomy = match taxonomy {
                Some(p) => Taxonomy::load(&p).map_err(|e| PipelineError::Config(e.to_string()))?,
                None => Taxonomy::bundled(),
            };
            let tasks = pipeline::prepare_tasks(&ws, &st, &taxonomy, TaskOptions { per_cell, overlap, rebuild: rebuild_tasks })?;
            let store = Arc::new(
                AnnotationStore::open(tasks, ws.path(pipeline::LABELS)).map_err(|e| PipelineError::Data(e.to_string()))?,
            );
            let static_dir = static_dir.or_else(|| Some(ws.path("ui")).filter(|p| p.is_dir()));
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Config(e.to_string()))?;
            rt.block_on(annotation::serve(store, SocketAddr::new(host, port), static_dir.as_deref(), |a| {
                eprintln!("serving on http://{a}");
            }))
            .map_err(|e| PipelineError::Config(format!("server: {e}")))?;
            Ok(json!({ "stopped": true }))
        }
    }
}

/// Entry point for the binary: parses arguments, runs, prints, exits.
pub fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("NORMALIGN_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.exit_code())
        }
    }
}
