use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSchema, Taxonomy};
use crate::corpus::{chunk, transcript_sentences, AuditRecord};
use crate::lexicon::WordList;
use crate::model::{AgentResponse, Dilemma, MatchJudgment, MatchMatrix, Solution, TargetKind, Transcript};

pub const MATCH: &str = "match";
pub const NO_MATCH: &str = "no_match";

pub(crate) fn opposite_match_label(label: &str) -> &'static str {
    if label == MATCH {
        NO_MATCH
    } else {
        MATCH
    }
}

/// Kind-specific material shown to the annotator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPayload {
    MatchPair {
        dilemma: Dilemma,
        candidate: Box<Solution>,
        reference: Box<Solution>,
        /// Every reference solution for the dilemma.
        references: Vec<Solution>,
        pipeline_matched: bool,
    },
    Extraction {
        dilemma: Dilemma,
        source_text: String,
        solutions: Vec<Solution>,
    },
    DilemmaMapping {
        episode_id: String,
        summary: String,
        chunk_index: usize,
        chunk_text: String,
    },
    DilemmaContent {
        dilemma: Dilemma,
        section: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub kind: TargetKind,
    pub target_ref: String,
    pub payload: TaskPayload,
    pub label_schema: LabelSchema,
    /// What the pipeline decided, when the kind has a decision to check.
    pub pipeline_label: Option<String>,
    pub assigned_to: Option<String>,
    /// Distinct annotators wanted for this task.
    pub redundancy: usize,
}

/// Lookup tables for building task payloads.
#[derive(Clone, Debug, Default)]
pub struct CorpusIndex {
    pub dilemmas: BTreeMap<String, Dilemma>,
    pub solutions: BTreeMap<String, Solution>,
}

impl CorpusIndex {
    pub fn new(dilemmas: &[Dilemma], solutions: &[Solution]) -> Self {
        CorpusIndex {
            dilemmas: dilemmas.iter().map(|d| (d.id.clone(), d.clone())).collect(),
            solutions: solutions.iter().map(|s| (s.id.clone(), s.clone())).collect(),
        }
    }

    fn solutions_of(&self, dilemma_id: &str, agent_id: &str) -> Vec<Solution> {
        self.solutions
            .values()
            .filter(|s| s.dilemma_id == dilemma_id && s.agent_id == agent_id)
            .cloned()
            .collect()
    }
}

fn match_task(j: &MatchJudgment, dilemma: &Dilemma, index: &CorpusIndex, taxonomy: &Taxonomy) -> Option<AnnotationTask> {
    let candidate = index.solutions.get(&j.cand_solution_id)?.clone();
    let reference = index.solutions.get(&j.ref_solution_id)?.clone();
    let references = index.solutions_of(&dilemma.id, &reference.agent_id);
    Some(AnnotationTask {
        task_id: format!("match:{}:{}:{}", dilemma.id, j.cand_solution_id, j.ref_solution_id),
        kind: TargetKind::MatchPair,
        target_ref: format!("{}|{}", j.cand_solution_id, j.ref_solution_id),
        payload: TaskPayload::MatchPair {
            dilemma: dilemma.clone(),
            candidate: Box::new(candidate),
            reference: Box::new(reference),
            references,
            pipeline_matched: j.matched,
        },
        label_schema: taxonomy.match_pair.clone(),
        pipeline_label: Some(if j.matched { MATCH } else { NO_MATCH }.to_string()),
        assigned_to: None,
        redundancy: 1,
    })
}

/// Per dilemma and candidate agent, draws up to `per_cell` matched and
/// `per_cell` unmatched judgments uniformly without replacement.
///
/// Cells are visited in sorted order with one seeded generator, so the
/// result depends only on the matrices and the seed.
pub fn sample_match_tasks(
    matrices: &[MatchMatrix],
    index: &CorpusIndex,
    taxonomy: &Taxonomy,
    per_cell: usize,
    seed: u64,
) -> Vec<AnnotationTask> {
    type Cell<'a> = (Vec<&'a MatchJudgment>, Vec<&'a MatchJudgment>);
    let mut cells: BTreeMap<(String, String), Cell> = BTreeMap::new();
    for m in matrices {
        for j in m.judgments() {
            let Some(agent) = index.solutions.get(&j.cand_solution_id).map(|s| s.agent_id.clone()) else {
                continue;
            };
            let cell = cells.entry((m.dilemma_id.clone(), agent)).or_default();
            if j.matched {
                cell.0.push(j);
            } else {
                cell.1.push(j);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ((dilemma_id, _), (matched, unmatched)) in &cells {
        let Some(dilemma) = index.dilemmas.get(dilemma_id) else { continue };
        for pool in [matched, unmatched] {
            for j in pool.choose_multiple(&mut rng, per_cell) {
                out.extend(match_task(j, dilemma, index, taxonomy));
            }
        }
    }
    out
}

/// Marks the first `n` tasks of every kind for two annotators, giving a
/// fixed shared block for agreement.
pub fn with_overlap(mut tasks: Vec<AnnotationTask>, n: usize) -> Vec<AnnotationTask> {
    let mut seen: BTreeMap<TargetKind, usize> = BTreeMap::new();
    for t in &mut tasks {
        let c = seen.entry(t.kind).or_default();
        if *c < n {
            t.redundancy = t.redundancy.max(2);
        }
        *c += 1;
    }
    tasks
}

/// One task for the chunk each summary was mapped to, and one for the most
/// similar chunk the pipeline did not choose.
pub fn build_mapping_tasks(
    transcripts: &[Transcript],
    audit: &[AuditRecord],
    abbreviations: &WordList,
    chunk_size: usize,
    stride: usize,
    taxonomy: &Taxonomy,
) -> Vec<AnnotationTask> {
    let chunks: BTreeMap<&str, Vec<String>> = transcripts
        .iter()
        .map(|t| {
            let s = transcript_sentences(t, abbreviations);
            let texts = chunk(&s, chunk_size, stride)
                .map(|cs| cs.into_iter().map(|c| c.text).collect())
                .unwrap_or_default();
            (t.episode_id.as_str(), texts)
        })
        .collect();
    let mut out = Vec::new();
    for (pos, a) in audit.iter().enumerate() {
        let Some(chosen) = a.chunk_index else { continue };
        let runner_up = a.top_similarities.iter().map(|s| s.chunk_index).find(|&i| i != chosen);
        let picks = [(Some(chosen), "introduced"), (runner_up, "not_introduced")];
        for (idx, label) in picks {
            let Some(idx) = idx else { continue };
            let Some(text) = chunks.get(a.episode_id.as_str()).and_then(|c| c.get(idx)) else { continue };
            out.push(AnnotationTask {
                task_id: format!("mapping:{}:{pos}:{idx}", a.episode_id),
                kind: TargetKind::DilemmaMapping,
                target_ref: format!("{}:{idx}", a.episode_id),
                payload: TaskPayload::DilemmaMapping {
                    episode_id: a.episode_id.clone(),
                    summary: a.summary.clone(),
                    chunk_index: idx,
                    chunk_text: text.clone(),
                },
                label_schema: taxonomy.dilemma_mapping.clone(),
                pipeline_label: Some(label.into()),
                assigned_to: None,
                redundancy: 1,
            });
        }
    }
    out
}

/// One task per generated dilemma, shown next to its transcript section.
pub fn build_content_tasks(dilemmas: &[Dilemma], sections: &[AgentResponse], taxonomy: &Taxonomy) -> Vec<AnnotationTask> {
    dilemmas
        .iter()
        .filter_map(|d| {
            let section = sections.iter().find(|r| r.dilemma_id == d.id)?;
            Some(AnnotationTask {
                task_id: format!("content:{}", d.id),
                kind: TargetKind::DilemmaContent,
                target_ref: d.id.clone(),
                payload: TaskPayload::DilemmaContent { dilemma: d.clone(), section: section.text.clone() },
                label_schema: taxonomy.dilemma_content.clone(),
                pipeline_label: None,
                assigned_to: None,
                redundancy: 1,
            })
        })
        .collect()
}

/// One task per response that yielded solutions.
pub fn build_extraction_tasks(
    dilemmas: &[Dilemma],
    responses: &[AgentResponse],
    solutions: &[Solution],
    taxonomy: &Taxonomy,
) -> Vec<AnnotationTask> {
    responses
        .iter()
        .filter_map(|r| {
            let dilemma = dilemmas.iter().find(|d| d.id == r.dilemma_id)?;
            let rid = r.id();
            let sols: Vec<Solution> = solutions.iter().filter(|s| s.source_response_id == rid).cloned().collect();
            if sols.is_empty() {
                return None;
            }
            Some(AnnotationTask {
                task_id: format!("extraction:{rid}"),
                kind: TargetKind::Extraction,
                target_ref: rid,
                payload: TaskPayload::Extraction { dilemma: dilemma.clone(), source_text: r.text.clone(), solutions: sols },
                label_schema: taxonomy.extraction.clone(),
                pipeline_label: None,
                assigned_to: None,
                redundancy: 1,
            })
        })
        .collect()
}
