//! File-based stages over one data directory:
//! ingest → respond → extract → match → score → report.
//!
//! Every stage reads its inputs from the directory, writes its outputs
//! atomically, and records the backends and template hashes it used in
//! `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    build_content_tasks, build_extraction_tasks, build_mapping_tasks, sample_match_tasks, with_overlap,
    AnnotationTask, CorpusIndex, Taxonomy,
};
use crate::batch::run_bounded;
use crate::client::{BackendRegistry, ClientError};
use crate::corpus::{self, AuditRecord, Ceiling, DilemmaExtractor, IngestConfig, SectionLocator, SkipRecord, PANEL_AGENT};
use crate::extraction::{Extractor, Postprocessor};
use crate::io::{self, IoError};
use crate::lexicon::{abbreviations, award_keywords, Language, NegationLexicon, StyleLexicons};
use crate::matching::{match_all, LlmJudge, PairJudge, TextEqualityJudge};
use crate::metrics::{self, aggregate, mean_style, stylometrics, topic_weighted_avg, AggregateMode, AggregateScores, StyleMeans};
use crate::model::{
    validate_corpus, AgentResponse, AlignmentScores, Corpus, Dilemma, MatchMatrix, MatchRecord, PairFailure,
    Solution, TopicMatrix, Transcript, Violation,
};
use crate::rational::Rational;
use crate::template::TemplateSet;

pub const TRANSCRIPTS: &str = "transcripts.jsonl";
pub const DILEMMAS: &str = "dilemmas.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const INGEST_SKIPPED: &str = "ingest_skipped.jsonl";
pub const RESPONSES: &str = "responses.jsonl";
pub const SOLUTIONS: &str = "solutions.jsonl";
pub const MATCHES: &str = "matches.jsonl";
pub const MATCH_FAILURES: &str = "match_failures.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const TASKS: &str = "tasks.jsonl";
pub const LABELS: &str = "labels.jsonl";

/// Backend name that selects the built-in text-equality judge.
pub const BUILTIN_TEXT_JUDGE: &str = "builtin:text-equality";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{file} is missing; run `normalign {stage}` first")]
    MissingInput { file: String, stage: &'static str },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("data: {0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit status for this class of failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::MissingInput { .. } => 3,
            PipelineError::Config(_) => 4,
            PipelineError::Client(ClientError::Config(_)) => 4,
            PipelineError::Client(_) => 5,
            PipelineError::Io(_) | PipelineError::Data(_) => 6,
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.to_path_buf(), source }
}

/// The data directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Workspace { dir: dir.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Reads a stage input; a missing file names the stage producing it.
    pub fn require<T: DeserializeOwned>(&self, file: &str, producer: &'static str) -> Result<Vec<T>, PipelineError> {
        io::read_jsonl(&self.path(file)).map_err(|e| {
            if e.is_not_found() {
                PipelineError::MissingInput { file: file.to_string(), stage: producer }
            } else {
                e.into()
            }
        })
    }

    pub fn optional<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, PipelineError> {
        Ok(io::read_jsonl_or_empty(&self.path(file))?)
    }

    pub fn write<T: Serialize>(&self, file: &str, items: &[T]) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_error(&self.dir, e))?;
        Ok(io::write_jsonl(&self.path(file), items)?)
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(IoError::from)?;
        bytes.push(b'\n');
        Ok(io::write_atomic(&self.path(file), &bytes)?)
    }

    pub fn read_json<T: DeserializeOwned>(&self, file: &str, producer: &'static str) -> Result<T, PipelineError> {
        let path = self.path(file);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::MissingInput { file: file.to_string(), stage: producer }
            } else {
                io_error(&path, e).into()
            }
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }

    pub fn manifest(&self) -> Result<Manifest, PipelineError> {
        if self.path(MANIFEST).exists() {
            self.read_json(MANIFEST, "ingest")
        } else {
            Ok(Manifest::default())
        }
    }

    fn record_stage(&self, name: String, info: StageInfo) -> Result<(), PipelineError> {
        let mut m = self.manifest()?;
        m.stages.insert(name, info);
        self.write_json(MANIFEST, &m)
    }

    /// Dilemmas in file order, truncated to `limit`.
    fn dilemmas(&self, limit: Option<usize>) -> Result<Vec<Dilemma>, PipelineError> {
        let mut d: Vec<Dilemma> = self.require(DILEMMAS, "ingest")?;
        if let Some(n) = limit {
            d.truncate(n);
        }
        Ok(d)
    }
}

/// Provenance of one stage run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub backends: BTreeMap<String, String>,
    pub templates: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageInfo>,
}

/// Everything a stage needs besides the data directory.
pub struct Settings {
    pub registry: BackendRegistry,
    pub templates: TemplateSet,
    pub backend_override: Option<String>,
    pub parallelism: usize,
    pub limit: Option<usize>,
    pub seed: u64,
    pub now: DateTime<Utc>,
    pub lang: Language,
}

impl Settings {
    /// Bundled templates, parallelism 4, seed 0, Danish, and the unix epoch
    /// as the timestamp for new records.
    pub fn new(registry: BackendRegistry) -> Self {
        Settings {
            registry,
            templates: TemplateSet::bundled(),
            backend_override: None,
            parallelism: 4,
            limit: None,
            seed: 0,
            now: DateTime::UNIX_EPOCH,
            lang: Language::Danish,
        }
    }

    fn backend(&self, stage: &str) -> Result<String, PipelineError> {
        Ok(self.registry.stage_backend(stage, self.backend_override.as_deref())?)
    }

    fn negation(&self) -> NegationLexicon {
        NegationLexicon::bundled_all()
    }
}

fn params<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct IngestOptions {
    pub chunk_size: usize,
    pub stride: usize,
    pub ceiling: Ceiling,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { chunk_size: 3, stride: 1, ceiling: Ceiling::Percentile(95) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub episodes: usize,
    pub dilemmas: usize,
    pub skipped: usize,
    pub ceiling: Option<usize>,
}

/// Transcripts → dilemmas, mapping audit, and the panel's sections as
/// responses of agent `panel`.
pub fn ingest(ws: &Workspace, st: &Settings, opts: IngestOptions) -> Result<IngestSummary, PipelineError> {
    let mut transcripts: Vec<Transcript> = ws.require(TRANSCRIPTS, "ingest (transcripts.jsonl is an input)")?;
    if let Some(n) = st.limit {
        transcripts.truncate(n);
    }
    // the override targets chat calls; embeddings keep their configured backend
    let embed_b = st.registry.stage_backend("embed", None)?;
    let (verify_b, dilemma_b) = (st.backend("verify")?, st.backend("dilemma")?);
    let embed = st.registry.embed(&embed_b)?;
    let verifier = st.registry.chat(&verify_b, "verify")?;
    let writer = st.registry.chat(&dilemma_b, "dilemma")?;
    let backends = params([
        ("embed", embed.model_ref().to_string()),
        ("verify", verifier.model_ref().to_string()),
        ("dilemma", writer.model_ref().to_string()),
    ]);
    let locator = SectionLocator::new(embed, verifier, st.templates.verify.clone());
    let extractor = DilemmaExtractor::new(writer, st.templates.dilemma.clone());
    let cfg = IngestConfig {
        chunk_size: opts.chunk_size,
        stride: opts.stride,
        ceiling: opts.ceiling,
        abbreviations: abbreviations(st.lang),
        award_keywords: award_keywords(st.lang),
        parallelism: st.parallelism,
    };
    let out = corpus::ingest(&transcripts, &cfg, &locator, &extractor, st.now);
    for s in &out.skipped {
        tracing::warn!(episode = %s.episode_id, summary = ?s.summary_index, "skipped: {}", s.reason);
    }

    ws.write(DILEMMAS, &out.dilemmas)?;
    ws.write(AUDIT, &out.audit)?;
    ws.write(INGEST_SKIPPED, &out.skipped)?;
    let mut responses: Vec<AgentResponse> = ws.optional(RESPONSES)?;
    responses.retain(|r| r.agent_id != PANEL_AGENT);
    responses.splice(0..0, out.panel_responses.iter().cloned());
    ws.write(RESPONSES, &responses)?;
    ws.record_stage(
        "ingest".into(),
        StageInfo {
            backends,
            templates: params([
                ("verify", st.templates.verify.hash()),
                ("dilemma", st.templates.dilemma.hash()),
            ]),
            params: params([
                ("chunk_size", opts.chunk_size.to_string()),
                ("stride", opts.stride.to_string()),
                ("ceiling", format!("{:?}", opts.ceiling)),
                ("ceiling_sentences", out.ceiling.map_or("none".into(), |c| c.to_string())),
            ]),
        },
    )?;
    Ok(IngestSummary {
        episodes: transcripts.len(),
        dilemmas: out.dilemmas.len(),
        skipped: out.skipped.len(),
        ceiling: out.ceiling,
    })
}

/// What an agent sees: the dilemma body and its question, nothing else.
pub fn respond_prompt(d: &Dilemma) -> String {
    format!("{}\n\n{}", d.body.trim(), d.question.trim())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RespondSummary {
    pub new: usize,
    pub kept: usize,
    pub failed: usize,
}

/// Collects one response per dilemma from `agent`. Responses already on
/// disk are kept, so a re-run only asks for what is missing.
pub fn respond(ws: &Workspace, st: &Settings, agent: &str) -> Result<RespondSummary, PipelineError> {
    if agent == PANEL_AGENT {
        return Err(PipelineError::Config(format!("agent name {PANEL_AGENT} is reserved for transcript sections")));
    }
    let dilemmas = ws.dilemmas(st.limit)?;
    let backend = match &st.backend_override {
        Some(b) => b.clone(),
        None => st
            .registry
            .config()
            .agents
            .get(agent)
            .cloned()
            .ok_or_else(|| PipelineError::Config(format!("no backend configured for agent {agent}")))?,
    };
    let client = st.registry.chat(&backend, "respond")?;
    let mut responses: Vec<AgentResponse> = ws.optional(RESPONSES)?;
    let have: BTreeSet<String> = responses.iter().filter(|r| r.agent_id == agent).map(|r| r.dilemma_id.clone()).collect();
    let todo: Vec<&Dilemma> = dilemmas.iter().filter(|d| !have.contains(&d.id)).collect();
    let requests: Vec<_> = todo.iter().map(|d| client.request(respond_prompt(d))).collect();
    let results = client.complete_batch(&requests, st.parallelism);
    let mut summary = RespondSummary { new: 0, kept: dilemmas.len() - todo.len(), failed: 0 };
    for (d, r) in todo.iter().zip(results) {
        match r {
            Ok(c) => {
                summary.new += 1;
                responses.push(AgentResponse {
                    agent_id: agent.to_string(),
                    dilemma_id: d.id.clone(),
                    text: c.text,
                    created_at: st.now,
                });
            }
            Err(e) => {
                summary.failed += 1;
                tracing::warn!(agent, dilemma = %d.id, "no response: {e}");
            }
        }
    }
    ws.write(RESPONSES, &responses)?;
    ws.record_stage(
        format!("respond:{agent}"),
        StageInfo { backends: params([("respond", client.model_ref().to_string())]), ..Default::default() },
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub responses: usize,
    pub solutions: usize,
    pub failed: usize,
}

/// Extracts and cleans solutions for every response to a known dilemma.
/// Output is ordered by dilemma, then agent, independent of response order.
pub fn extract(ws: &Workspace, st: &Settings) -> Result<ExtractSummary, PipelineError> {
    let dilemmas = ws.dilemmas(st.limit)?;
    let responses: Vec<AgentResponse> = ws.require(RESPONSES, "respond")?;
    let extract_b = st.backend("extract")?;
    let post_b = st
        .backend("postprocess")
        .or_else(|_| Ok::<_, PipelineError>(extract_b.clone()))?;
    let extractor = Extractor::new(st.registry.chat(&extract_b, "extract")?, st.templates.extraction.clone(), st.negation());
    let post = Postprocessor::new(st.registry.chat(&post_b, "postprocess")?, st.templates.postprocess.clone(), st.negation());

    let by_id: BTreeMap<&str, usize> = dilemmas.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut jobs: Vec<(&Dilemma, &AgentResponse)> = responses
        .iter()
        .filter_map(|r| by_id.get(r.dilemma_id.as_str()).map(|&i| (&dilemmas[i], r)))
        .collect();
    jobs.sort_by(|a, b| (by_id[a.0.id.as_str()], &a.1.agent_id).cmp(&(by_id[b.0.id.as_str()], &b.1.agent_id)));

    let results = run_bounded(&jobs, st.parallelism, |(d, r)| {
        let extracted = extractor.extract(d, r)?;
        post.postprocess(extracted.into_vec(), d)
    });
    let mut solutions = Vec::new();
    let mut failed = 0;
    for ((d, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(s) => solutions.extend(s),
            Err(e) => {
                failed += 1;
                tracing::warn!(agent = %r.agent_id, dilemma = %d.id, "extraction failed: {e}");
            }
        }
    }
    ws.write(SOLUTIONS, &solutions)?;
    ws.record_stage(
        "extract".into(),
        StageInfo {
            backends: params([
                ("extract", extractor.client.model_ref().to_string()),
                ("postprocess", post.client.model_ref().to_string()),
            ]),
            templates: params([
                ("extraction", st.templates.extraction.hash()),
                ("postprocess", st.templates.postprocess.hash()),
            ]),
            ..Default::default()
        },
    )?;
    Ok(ExtractSummary { responses: jobs.len(), solutions: solutions.len(), failed })
}

/// Matrix inputs for one dilemma: both agents answered it.
struct MatrixAxes<'a> {
    dilemma: &'a Dilemma,
    cand: Vec<Solution>,
    reference: Vec<Solution>,
}

fn axes<'a>(
    dilemmas: &'a [Dilemma],
    responses: &[AgentResponse],
    solutions: &[Solution],
    cand: &str,
    reference: &str,
) -> Vec<MatrixAxes<'a>> {
    let answered: BTreeSet<(&str, &str)> =
        responses.iter().map(|r| (r.agent_id.as_str(), r.dilemma_id.as_str())).collect();
    dilemmas
        .iter()
        .filter(|d| answered.contains(&(cand, d.id.as_str())) && answered.contains(&(reference, d.id.as_str())))
        .map(|d| {
            let of = |agent: &str| -> Vec<Solution> {
                solutions.iter().filter(|s| s.dilemma_id == d.id && s.agent_id == agent).cloned().collect()
            };
            MatrixAxes { dilemma: d, cand: of(cand), reference: of(reference) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatchSummary {
    pub dilemmas: usize,
    pub pairs: usize,
    pub failures: usize,
}

fn id_sets(ax: &[MatrixAxes]) -> (BTreeSet<String>, BTreeSet<String>) {
    let c = ax.iter().flat_map(|a| a.cand.iter().map(|s| s.id.clone())).collect();
    let r = ax.iter().flat_map(|a| a.reference.iter().map(|s| s.id.clone())).collect();
    (c, r)
}

/// Judges every (candidate, reference) solution pair per dilemma and
/// replaces this agent pair's records in `matches.jsonl`.
pub fn match_stage(ws: &Workspace, st: &Settings, cand: &str, reference: &str) -> Result<MatchSummary, PipelineError> {
    let dilemmas = ws.dilemmas(st.limit)?;
    let responses: Vec<AgentResponse> = ws.require(RESPONSES, "respond")?;
    let solutions: Vec<Solution> = ws.require(SOLUTIONS, "extract")?;
    let backend = st.backend("match")?;
    let llm;
    let judge: &dyn PairJudge = if backend == BUILTIN_TEXT_JUDGE {
        &TextEqualityJudge
    } else {
        llm = LlmJudge::new(st.registry.chat(&backend, "match")?, st.templates.matching.clone());
        &llm
    };
    let ax = axes(&dilemmas, &responses, &solutions, cand, reference);
    let mut records = Vec::new();
    let mut failures: Vec<PairFailure> = Vec::new();
    for a in &ax {
        let m = match_all(&a.cand, &a.reference, a.dilemma, judge, st.parallelism);
        records.extend(m.to_records());
        failures.extend(m.failures().iter().cloned());
    }
    let (cand_ids, ref_ids) = id_sets(&ax);
    let mut all: Vec<MatchRecord> = ws.optional(MATCHES)?;
    all.retain(|r| !(cand_ids.contains(&r.cand_solution_id) && ref_ids.contains(&r.ref_solution_id)));
    let summary = MatchSummary { dilemmas: ax.len(), pairs: records.len(), failures: failures.len() };
    all.extend(records);
    ws.write(MATCHES, &all)?;
    let mut all_failures: Vec<PairFailure> = ws.optional(MATCH_FAILURES)?;
    all_failures.retain(|f| !(cand_ids.contains(&f.cand_solution_id) && ref_ids.contains(&f.ref_solution_id)));
    all_failures.extend(failures);
    ws.write(MATCH_FAILURES, &all_failures)?;
    ws.record_stage(
        format!("match:{cand}"),
        StageInfo {
            backends: params([("match", judge.describe())]),
            templates: params([("matching", st.templates.matching.hash())]),
            params: params([("ref", reference.to_string())]),
        },
    )?;
    Ok(summary)
}

/// Agent pairs recorded by the match stage, as (candidate, reference).
pub fn match_runs(manifest: &Manifest) -> Vec<(String, String)> {
    manifest
        .stages
        .iter()
        .filter_map(|(k, v)| Some((k.strip_prefix("match:")?.to_string(), v.params.get("ref")?.clone())))
        .collect()
}

/// Rebuilds the matrices of one agent pair from stored records.
pub fn load_matrices(
    dilemmas: &[Dilemma],
    responses: &[AgentResponse],
    solutions: &[Solution],
    records: &[MatchRecord],
    cand: &str,
    reference: &str,
) -> Result<Vec<MatchMatrix>, PipelineError> {
    let mut by_dilemma: BTreeMap<&str, Vec<MatchRecord>> = BTreeMap::new();
    for r in records {
        by_dilemma.entry(&r.dilemma_id).or_default().push(r.clone());
    }
    axes(dilemmas, responses, solutions, cand, reference)
        .into_iter()
        .map(|a| {
            let cand_ids: Vec<String> = a.cand.iter().map(|s| s.id.clone()).collect();
            let ref_ids: Vec<String> = a.reference.iter().map(|s| s.id.clone()).collect();
            let mine = by_dilemma
                .get(a.dilemma.id.as_str())
                .into_iter()
                .flatten()
                .filter(|r| cand_ids.contains(&r.cand_solution_id) && ref_ids.contains(&r.ref_solution_id))
                .cloned();
            MatchMatrix::from_records(a.dilemma.id.clone(), cand_ids.clone(), ref_ids.clone(), mine)
                .map_err(|e| PipelineError::Data(e.to_string()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilemmaScores {
    pub dilemma_id: String,
    pub cand_agent: String,
    pub ref_agent: String,
    #[serde(flatten)]
    pub scores: AlignmentScores,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAggregate {
    pub ref_agent: String,
    #[serde(rename = "macro")]
    pub macro_: AggregateScores,
    pub micro: AggregateScores,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: AggregateMode,
    pub stages: BTreeMap<String, StageInfo>,
    /// Dilemmas left out per candidate agent because their matrix was partial.
    pub partial_matrices: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub per_dilemma: Vec<DilemmaScores>,
    /// Keyed by candidate agent.
    pub aggregate: BTreeMap<String, AgentAggregate>,
    /// Candidate agent → topic → weighted AVG.
    pub topics: BTreeMap<String, BTreeMap<String, Option<Rational>>>,
    pub style: BTreeMap<String, StyleMeans>,
    pub meta: ReportMeta,
}

/// Scores every recorded agent pair and writes `report.json`.
pub fn score(ws: &Workspace, st: &Settings, mode: AggregateMode, topics: Option<&Path>) -> Result<Report, PipelineError> {
    if !ws.path(MATCHES).exists() {
        return Err(PipelineError::MissingInput { file: MATCHES.into(), stage: "match" });
    }
    let dilemmas = ws.dilemmas(st.limit)?;
    let responses: Vec<AgentResponse> = ws.require(RESPONSES, "respond")?;
    let solutions: Vec<Solution> = ws.require(SOLUTIONS, "extract")?;
    let records: Vec<MatchRecord> = ws.require(MATCHES, "match")?;
    let manifest = ws.manifest()?;
    let topic_table = topics
        .map(|p| {
            let f = std::fs::File::open(p).map_err(|e| io_error(p, e))?;
            TopicMatrix::from_csv(f).map_err(|e| PipelineError::Data(e.to_string()))
        })
        .transpose()?;

    let mut report = Report {
        per_dilemma: Vec::new(),
        aggregate: BTreeMap::new(),
        topics: BTreeMap::new(),
        style: BTreeMap::new(),
        meta: ReportMeta { mode, stages: manifest.stages.clone(), partial_matrices: BTreeMap::new() },
    };
    for (cand, reference) in match_runs(&manifest) {
        let matrices = load_matrices(&dilemmas, &responses, &solutions, &records, &cand, &reference)?;
        let mut scores = Vec::new();
        let mut partial = 0;
        for m in &matrices {
            match metrics::score(m) {
                Ok(s) => {
                    report.per_dilemma.push(DilemmaScores {
                        dilemma_id: m.dilemma_id.clone(),
                        cand_agent: cand.clone(),
                        ref_agent: reference.clone(),
                        scores: s.clone(),
                    });
                    scores.push((m.dilemma_id.clone(), s));
                }
                Err(_) => partial += 1,
            }
        }
        report.meta.partial_matrices.insert(cand.clone(), partial);
        let just: Vec<AlignmentScores> = scores.iter().map(|(_, s)| s.clone()).collect();
        if just.is_empty() {
            continue;
        }
        report.aggregate.insert(
            cand.clone(),
            AgentAggregate {
                ref_agent: reference.clone(),
                macro_: aggregate(&just, AggregateMode::Macro).map_err(|e| PipelineError::Data(e.to_string()))?,
                micro: aggregate(&just, AggregateMode::Micro).map_err(|e| PipelineError::Data(e.to_string()))?,
            },
        );
        if let Some(t) = &topic_table {
            let avgs: BTreeMap<String, Option<Rational>> =
                scores.iter().map(|(d, s)| (d.clone(), s.avg().cloned())).collect();
            let weighted = topic_weighted_avg(&avgs, t).map_err(|e| PipelineError::Data(e.to_string()))?;
            report.topics.insert(cand.clone(), weighted);
        }
    }

    let lex = StyleLexicons::bundled(st.lang);
    let scored: BTreeSet<&str> = dilemmas.iter().map(|d| d.id.as_str()).collect();
    let mut by_agent: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in responses.iter().filter(|r| scored.contains(r.dilemma_id.as_str())) {
        by_agent.entry(&r.agent_id).or_default().push(stylometrics(r, &lex, None));
    }
    report.style = by_agent.into_iter().map(|(a, s)| (a.to_string(), mean_style(&s))).collect();

    ws.write_json(REPORT, &report)?;
    Ok(report)
}

fn cell(r: Option<&Rational>) -> String {
    r.map(|r| r.to_decimal_string(6)).unwrap_or_default()
}

fn write_csv(ws: &Workspace, file: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| PipelineError::Data(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?;
    let path = ws.path(file);
    io::write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Plot-ready CSV tables from `report.json`.
pub fn report_csv(ws: &Workspace) -> Result<Vec<PathBuf>, PipelineError> {
    let report: Report = ws.read_json(REPORT, "score")?;
    let mut out = Vec::new();
    out.push(write_csv(
        ws,
        "report_per_dilemma.csv",
        &["dilemma_id", "cand_agent", "ref_agent", "n_agree", "n_conflict", "n_cand", "n_ref", "saa", "eaa", "avg"],
        report
            .per_dilemma
            .iter()
            .map(|d| {
                let s = &d.scores;
                vec![
                    d.dilemma_id.clone(),
                    d.cand_agent.clone(),
                    d.ref_agent.clone(),
                    s.n_agree().to_string(),
                    s.n_conflict().to_string(),
                    s.n_cand().to_string(),
                    s.n_ref().to_string(),
                    cell(s.saa()),
                    cell(s.eaa()),
                    cell(s.avg()),
                ]
            })
            .collect(),
    )?);
    out.push(write_csv(
        ws,
        "report_aggregate.csv",
        &["cand_agent", "ref_agent", "mode", "n_dilemmas", "saa", "eaa", "avg", "skipped_saa", "skipped_eaa", "skipped_avg"],
        report
            .aggregate
            .iter()
            .flat_map(|(agent, a)| {
                [&a.macro_, &a.micro].map(|g| {
                    vec![
                        agent.clone(),
                        a.ref_agent.clone(),
                        format!("{:?}", g.mode).to_lowercase(),
                        g.n_dilemmas.to_string(),
                        cell(g.saa.as_ref()),
                        cell(g.eaa.as_ref()),
                        cell(g.avg.as_ref()),
                        g.skipped.saa.to_string(),
                        g.skipped.eaa.to_string(),
                        g.skipped.avg.to_string(),
                    ]
                })
            })
            .collect(),
    )?);
    out.push(write_csv(
        ws,
        "report_topics.csv",
        &["cand_agent", "topic", "weighted_avg"],
        report
            .topics
            .iter()
            .flat_map(|(agent, t)| t.iter().map(move |(topic, v)| vec![agent.clone(), topic.clone(), cell(v.as_ref())]))
            .collect(),
    )?);
    out.push(write_csv(
        ws,
        "report_style.csv",
        &["agent", "n_responses", "numerals", "question_marks", "modal_verbs", "hedges", "you_pronouns", "person_mentions"],
        report
            .style
            .iter()
            .map(|(agent, s)| {
                vec![
                    agent.clone(),
                    s.n_responses.to_string(),
                    cell(s.numerals.as_ref()),
                    cell(s.question_marks.as_ref()),
                    cell(s.modal_verbs.as_ref()),
                    cell(s.hedges.as_ref()),
                    cell(s.you_pronouns.as_ref()),
                    cell(s.person_mentions.as_ref()),
                ]
            })
            .collect(),
    )?);
    Ok(out)
}

/// Referential checks over whatever artifacts exist.
pub fn validate(ws: &Workspace) -> Result<Vec<Violation>, PipelineError> {
    let corpus = Corpus {
        transcripts: ws.optional(TRANSCRIPTS)?,
        dilemmas: ws.require(DILEMMAS, "ingest")?,
        responses: ws.optional(RESPONSES)?,
        solutions: ws.optional(SOLUTIONS)?,
    };
    Ok(validate_corpus(&corpus))
}

#[derive(Clone, Copy, Debug)]
pub struct TaskOptions {
    pub per_cell: usize,
    pub overlap: usize,
    pub rebuild: bool,
}

/// Loads `tasks.jsonl`, or builds it from the artifacts present.
pub fn prepare_tasks(
    ws: &Workspace,
    st: &Settings,
    taxonomy: &Taxonomy,
    opts: TaskOptions,
) -> Result<Vec<AnnotationTask>, PipelineError> {
    if ws.path(TASKS).exists() && !opts.rebuild {
        return ws.optional(TASKS);
    }
    let dilemmas = ws.dilemmas(st.limit)?;
    let responses: Vec<AgentResponse> = ws.optional(RESPONSES)?;
    let solutions: Vec<Solution> = ws.optional(SOLUTIONS)?;
    let records: Vec<MatchRecord> = ws.optional(MATCHES)?;
    let transcripts: Vec<Transcript> = ws.optional(TRANSCRIPTS)?;
    let audit: Vec<AuditRecord> = ws.optional(AUDIT)?;
    let manifest = ws.manifest()?;

    let mut matrices = Vec::new();
    for (cand, reference) in match_runs(&manifest) {
        matrices.extend(
            load_matrices(&dilemmas, &responses, &solutions, &records, &cand, &reference)?
                .into_iter()
                .filter(|m| !m.is_partial()),
        );
    }
    let index = CorpusIndex::new(&dilemmas, &solutions);
    let ingest = manifest.stages.get("ingest");
    let param = |k: &str, default: usize| {
        ingest.and_then(|i| i.params.get(k)).and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let panel: Vec<AgentResponse> = responses.iter().filter(|r| r.agent_id == PANEL_AGENT).cloned().collect();

    let mut tasks = sample_match_tasks(&matrices, &index, taxonomy, opts.per_cell, st.seed);
    tasks.extend(build_mapping_tasks(
        &transcripts,
        &audit,
        &abbreviations(st.lang),
        param("chunk_size", 3),
        param("stride", 1),
        taxonomy,
    ));
    tasks.extend(build_content_tasks(&dilemmas, &panel, taxonomy));
    tasks.extend(build_extraction_tasks(&dilemmas, &responses, &solutions, taxonomy));
    let tasks = with_overlap(tasks, opts.overlap);
    ws.write(TASKS, &tasks)?;
    Ok(tasks)
}

/// Reads skipped-episode notes from the last ingest.
pub fn ingest_skips(ws: &Workspace) -> Result<Vec<SkipRecord>, PipelineError> {
    ws.optional(INGEST_SKIPPED)
}
