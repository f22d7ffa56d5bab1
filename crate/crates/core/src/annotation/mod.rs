//! Human validation: task building and sampling, the label log, and
//! agreement statistics.

mod http;
mod tasks;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::io::{self, IoError};
use crate::metrics::{classification_report, cohen_kappa, ClassificationReport, MetricsError};
use crate::model::{AnnotationRecord, TargetKind};
use crate::rational::Rational;

pub use http::{router, serve};
pub use tasks::{
    build_content_tasks, build_extraction_tasks, build_mapping_tasks, sample_match_tasks, with_overlap,
    AnnotationTask, CorpusIndex, TaskPayload,
};

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("no labels for {0}")]
    EmptyInput(&'static str),
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Labels and issue tags accepted for one task kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub labels: Vec<String>,
    pub issues: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub match_pair: LabelSchema,
    pub extraction: LabelSchema,
    pub dilemma_mapping: LabelSchema,
    pub dilemma_content: LabelSchema,
}

impl Taxonomy {
    pub fn bundled() -> Self {
        Taxonomy::parse(include_str!("taxonomy.toml")).expect("bundled taxonomy parses")
    }

    pub fn parse(text: &str) -> Result<Self, AnnotationError> {
        toml::from_str(text).map_err(|e| AnnotationError::Taxonomy(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        let text = std::fs::read_to_string(path).map_err(|e| AnnotationError::Taxonomy(format!("{}: {e}", path.display())))?;
        Taxonomy::parse(&text)
    }

    pub fn schema(&self, kind: TargetKind) -> &LabelSchema {
        match kind {
            TargetKind::MatchPair => &self.match_pair,
            TargetKind::Extraction => &self.extraction,
            TargetKind::DilemmaMapping => &self.dilemma_mapping,
            TargetKind::DilemmaContent => &self.dilemma_content,
        }
    }
}

/// Body of `POST /api/labels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub task_id: String,
    pub annotator_id: String,
    pub label: String,
    #[serde(default)]
    pub issues: Vec<String>,
}

/// Task list plus the append-only label log.
///
/// Writes go through one lock that covers both the file append and the
/// in-memory copy, so a reader never sees a label that is not on disk.
pub struct AnnotationStore {
    tasks: Vec<AnnotationTask>,
    index: BTreeMap<String, usize>,
    log_path: PathBuf,
    records: Mutex<Vec<AnnotationRecord>>,
}

impl AnnotationStore {
    /// Opens a store over `tasks`, replaying any existing log at `log_path`.
    pub fn open(tasks: Vec<AnnotationTask>, log_path: impl Into<PathBuf>) -> Result<Self, AnnotationError> {
        let log_path = log_path.into();
        let mut index = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if index.insert(t.task_id.clone(), i).is_some() {
                return Err(AnnotationError::SchemaViolation(format!("duplicate task id {}", t.task_id)));
            }
        }
        let records = io::read_jsonl_or_empty(&log_path)?;
        Ok(AnnotationStore { tasks, index, log_path, records: Mutex::new(records) })
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&AnnotationTask> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    /// Full log, including superseded records.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn history(&self, task_id: &str, annotator_id: &str) -> Vec<AnnotationRecord> {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.task_id == task_id && r.annotator_id == annotator_id)
            .cloned()
            .collect()
    }

    /// First task of `kind` (any kind when `None`) open to this annotator:
    /// not yet labeled by them, assigned to them or to nobody, and still
    /// short of its required number of annotators.
    pub fn next_task(&self, annotator_id: &str, kind: Option<TargetKind>) -> Option<AnnotationTask> {
        let records = self.records.lock().unwrap();
        let mut labelers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in records.iter() {
            labelers.entry(&r.task_id).or_default().insert(&r.annotator_id);
        }
        self.tasks
            .iter()
            .find(|t| {
                let who = labelers.get(t.task_id.as_str());
                kind.is_none_or(|k| t.kind == k)
                    && t.assigned_to.as_deref().is_none_or(|a| a == annotator_id)
                    && !who.is_some_and(|w| w.contains(annotator_id))
                    && who.map_or(0, BTreeSet::len) < t.redundancy.max(1)
            })
            .cloned()
    }

    pub fn record_label(&self, sub: LabelSubmission, now: DateTime<Utc>) -> Result<AnnotationRecord, AnnotationError> {
        let task = self
            .task(&sub.task_id)
            .ok_or_else(|| AnnotationError::UnknownTask(sub.task_id.clone()))?;
        if sub.annotator_id.trim().is_empty() {
            return Err(AnnotationError::SchemaViolation("empty annotator id".into()));
        }
        if !task.label_schema.labels.contains(&sub.label) {
            return Err(AnnotationError::SchemaViolation(format!(
                "label {:?} not in {:?}",
                sub.label, task.label_schema.labels
            )));
        }
        if let Some(bad) = sub.issues.iter().find(|i| !task.label_schema.issues.contains(i)) {
            return Err(AnnotationError::SchemaViolation(format!("unknown issue tag {bad:?}")));
        }
        let record = AnnotationRecord {
            task_id: task.task_id.clone(),
            annotator_id: sub.annotator_id,
            target_kind: task.kind,
            target_ref: task.target_ref.clone(),
            label: sub.label,
            issues: sub.issues,
            created_at: now,
        };
        let mut records = self.records.lock().unwrap();
        io::append_jsonl(&self.log_path, &record)?;
        records.push(record.clone());
        Ok(record)
    }

    /// Number of tasks each annotator has labeled, per kind.
    pub fn progress(&self) -> Progress {
        let current = current_records(&self.records.lock().unwrap());
        let mut annotators: BTreeMap<String, BTreeMap<TargetKind, usize>> = BTreeMap::new();
        for r in &current {
            *annotators.entry(r.annotator_id.clone()).or_default().entry(r.target_kind).or_default() += 1;
        }
        let mut tasks: BTreeMap<TargetKind, TaskProgress> = BTreeMap::new();
        for t in &self.tasks {
            let n = current.iter().filter(|r| r.task_id == t.task_id).count();
            let p = tasks.entry(t.kind).or_default();
            p.total += 1;
            p.complete += usize::from(n >= t.redundancy.max(1));
        }
        Progress { annotators, tasks }
    }

    pub fn stats(&self, kind: TargetKind) -> Result<AgreementStats, AnnotationError> {
        agreement_stats(kind, &self.records.lock().unwrap(), &self.tasks)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub total: usize,
    pub complete: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotators: BTreeMap<String, BTreeMap<TargetKind, usize>>,
    pub tasks: BTreeMap<TargetKind, TaskProgress>,
}

/// Latest record per (task, annotator), in log order of first submission.
pub fn current_records(records: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut latest: BTreeMap<(&str, &str), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        let key = (r.task_id.as_str(), r.annotator_id.as_str());
        if latest.insert(key, r).is_none() {
            order.push(key);
        }
    }
    order.into_iter().map(|k| latest[&k].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairKappa {
    pub annotator_a: String,
    pub annotator_b: String,
    pub n_items: usize,
    pub kappa: Option<Rational>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub kind: TargetKind,
    /// Current (non-superseded) records.
    pub n_records: usize,
    pub n_items: usize,
    /// Human majority as gold, pipeline output as predicted.
    pub classification: Option<ClassificationReport>,
    pub gold_policy: String,
    /// Items dropped from the report because the annotators tied.
    pub contested: usize,
    /// Mean over annotator pairs with a defined kappa.
    pub kappa: Option<Rational>,
    pub kappa_items: usize,
    pub kappa_pairs: Vec<PairKappa>,
    pub issue_histogram: BTreeMap<String, usize>,
    /// Share of current records carrying at least one issue tag.
    pub issue_rate: Option<Rational>,
    pub issue_rate_display: Option<String>,
}

/// Maps a human label into the pipeline's label space. Match-pair annotators
/// judge whether the pipeline's decision is right; other kinds are labeled
/// in the pipeline's own terms.
fn gold_label(kind: TargetKind, human: &str, pipeline: &str) -> String {
    match (kind, human) {
        (TargetKind::MatchPair, "correct") => pipeline.to_string(),
        (TargetKind::MatchPair, "incorrect") => tasks::opposite_match_label(pipeline).to_string(),
        _ => human.to_string(),
    }
}

fn majority(labels: &[String]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (first, _) = winners.next()?;
    winners.next().is_none().then(|| first.to_string())
}

pub fn agreement_stats(
    kind: TargetKind,
    records: &[AnnotationRecord],
    tasks: &[AnnotationTask],
) -> Result<AgreementStats, AnnotationError> {
    let current: Vec<AnnotationRecord> = current_records(records)
        .into_iter()
        .filter(|r| r.target_kind == kind)
        .collect();
    if current.is_empty() {
        return Err(AnnotationError::EmptyInput(kind.as_str()));
    }
    let pipeline: BTreeMap<&str, &str> = tasks
        .iter()
        .filter_map(|t| t.pipeline_label.as_deref().map(|p| (t.task_id.as_str(), p)))
        .collect();
    let mut by_item: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in &current {
        by_item.entry(&r.task_id).or_default().push(r);
    }

    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    let mut contested = 0;
    for (task_id, rs) in &by_item {
        let Some(&p) = pipeline.get(task_id) else { continue };
        let labels: Vec<String> = rs.iter().map(|r| gold_label(kind, &r.label, p)).collect();
        match majority(&labels) {
            Some(g) => {
                gold.push(g);
                predicted.push(p.to_string());
            }
            None => contested += 1,
        }
    }
    let classification = if gold.is_empty() { None } else { Some(classification_report(&gold, &predicted)?) };

    let annotators: BTreeSet<&str> = current.iter().map(|r| r.annotator_id.as_str()).collect();
    let annotators: Vec<&str> = annotators.into_iter().collect();
    let mut kappa_pairs = Vec::new();
    let mut overlap_items = BTreeSet::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let mut la = Vec::new();
            let mut lb = Vec::new();
            for (task_id, rs) in &by_item {
                let x = rs.iter().find(|r| r.annotator_id == *a);
                let y = rs.iter().find(|r| r.annotator_id == *b);
                if let (Some(x), Some(y)) = (x, y) {
                    la.push(x.label.clone());
                    lb.push(y.label.clone());
                    overlap_items.insert(*task_id);
                }
            }
            if !la.is_empty() {
                kappa_pairs.push(PairKappa {
                    annotator_a: a.to_string(),
                    annotator_b: b.to_string(),
                    n_items: la.len(),
                    kappa: cohen_kappa(&la, &lb)?,
                });
            }
        }
    }
    let kappa = Rational::mean(kappa_pairs.iter().filter_map(|p| p.kappa.as_ref()));

    let mut issue_histogram = BTreeMap::new();
    for r in &current {
        for i in &r.issues {
            *issue_histogram.entry(i.clone()).or_default() += 1;
        }
    }
    let issue_rate = Rational::ratio(current.iter().filter(|r| !r.issues.is_empty()).count(), current.len());
    Ok(AgreementStats {
        kind,
        n_records: current.len(),
        n_items: by_item.len(),
        classification,
        gold_policy: "majority vote over annotators; ties dropped as contested".into(),
        contested,
        kappa,
        kappa_items: overlap_items.len(),
        kappa_pairs,
        issue_histogram,
        issue_rate_display: issue_rate.as_ref().map(|r| r.to_percent_string(1)),
        issue_rate,
    })
}
