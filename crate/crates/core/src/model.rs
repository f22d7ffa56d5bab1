//! Shared domain types: dilemmas, responses, solutions, match judgments and
//! alignment scores, plus corpus validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::rational::Rational;

/// Whether the author of a solution endorses it or discourages it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Advised,
    NotAdvised,
}

impl Stance {
    pub fn flip(self) -> Stance {
        match self {
            Stance::Advised => Stance::NotAdvised,
            Stance::NotAdvised => Stance::Advised,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Advised => "advised",
            Stance::NotAdvised => "not_advised",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dilemma {
    pub id: String,
    pub episode_id: String,
    /// One-sentence summary from the episode metadata.
    pub summary: String,
    pub body: String,
    /// Closing request for advice, e.g. "Hvad skal jeg gøre?".
    pub question: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_id: String,
    pub dilemma_id: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

impl AgentResponse {
    /// Responses are unique per (agent, dilemma), so the pair doubles as the id.
    pub fn id(&self) -> String {
        response_id(&self.agent_id, &self.dilemma_id)
    }
}

pub fn response_id(agent_id: &str, dilemma_id: &str) -> String {
    format!("{agent_id}:{dilemma_id}")
}

/// A single actionable recommendation in positive form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub id: String,
    pub dilemma_id: String,
    pub agent_id: String,
    pub text: String,
    pub stance: Stance,
    pub negation_flipped: bool,
    pub source_response_id: String,
}

/// Verdicts on the four component matching rules for one solution pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmrVerdict {
    pub order_ok: bool,
    pub semantics_ok: bool,
    pub conditions_ok: bool,
    pub entities_ok: bool,
    pub rationale: String,
}

impl CmrVerdict {
    pub fn all(ok: bool, rationale: impl Into<String>) -> Self {
        CmrVerdict {
            order_ok: ok,
            semantics_ok: ok,
            conditions_ok: ok,
            entities_ok: ok,
            rationale: rationale.into(),
        }
    }

    /// Two solutions match iff no rule is violated.
    pub fn no_rule_violated(&self) -> bool {
        self.order_ok && self.semantics_ok && self.conditions_ok && self.entities_ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchJudgment {
    pub cand_solution_id: String,
    pub ref_solution_id: String,
    pub verdicts: CmrVerdict,
    pub matched: bool,
    pub stance_agree: bool,
}

impl MatchJudgment {
    /// Derives `matched` from the verdicts and `stance_agree` from the stored
    /// stances. Neither is ever taken from the judge directly.
    pub fn new(cand: &Solution, reference: &Solution, verdicts: CmrVerdict) -> Self {
        MatchJudgment {
            cand_solution_id: cand.id.clone(),
            ref_solution_id: reference.id.clone(),
            matched: verdicts.no_rule_violated(),
            stance_agree: cand.stance == reference.stance,
            verdicts,
        }
    }
}

/// CMR flags as they appear in `matches.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmrFlags {
    pub order: bool,
    pub semantics: bool,
    pub conditions: bool,
    pub entities: bool,
}

/// One line of `matches.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub dilemma_id: String,
    pub cand_solution_id: String,
    pub ref_solution_id: String,
    pub cmr: CmrFlags,
    pub rationale: String,
    pub matched: bool,
    pub stance_agree: bool,
}

impl MatchRecord {
    pub fn from_judgment(dilemma_id: &str, j: &MatchJudgment) -> Self {
        MatchRecord {
            dilemma_id: dilemma_id.to_string(),
            cand_solution_id: j.cand_solution_id.clone(),
            ref_solution_id: j.ref_solution_id.clone(),
            cmr: CmrFlags {
                order: j.verdicts.order_ok,
                semantics: j.verdicts.semantics_ok,
                conditions: j.verdicts.conditions_ok,
                entities: j.verdicts.entities_ok,
            },
            rationale: j.verdicts.rationale.clone(),
            matched: j.matched,
            stance_agree: j.stance_agree,
        }
    }

    pub fn into_judgment(self) -> Result<MatchJudgment, ModelError> {
        let verdicts = CmrVerdict {
            order_ok: self.cmr.order,
            semantics_ok: self.cmr.semantics,
            conditions_ok: self.cmr.conditions,
            entities_ok: self.cmr.entities,
            rationale: self.rationale,
        };
        if verdicts.no_rule_violated() != self.matched {
            return Err(ModelError::Invariant(format!(
                "match record ({}, {}) has matched={} inconsistent with its CMR flags",
                self.cand_solution_id, self.ref_solution_id, self.matched
            )));
        }
        Ok(MatchJudgment {
            cand_solution_id: self.cand_solution_id,
            ref_solution_id: self.ref_solution_id,
            verdicts,
            matched: self.matched,
            stance_agree: self.stance_agree,
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("topic table: {0}")]
    TopicTable(String),
}

/// A pair that could not be judged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub cand_solution_id: String,
    pub ref_solution_id: String,
    pub error: String,
}

/// All judgments between one candidate solution set and one reference set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchMatrix {
    pub dilemma_id: String,
    pub cand_ids: Vec<String>,
    pub ref_ids: Vec<String>,
    judgments: BTreeMap<(String, String), MatchJudgment>,
    failures: Vec<PairFailure>,
}

impl MatchMatrix {
    pub fn new(dilemma_id: impl Into<String>, cand_ids: Vec<String>, ref_ids: Vec<String>) -> Self {
        MatchMatrix {
            dilemma_id: dilemma_id.into(),
            cand_ids,
            ref_ids,
            judgments: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    /// Inserts a judgment for a pair on the matrix axes. A second judgment
    /// for the same pair is rejected.
    pub fn insert(&mut self, judgment: MatchJudgment) -> Result<(), ModelError> {
        if !self.cand_ids.contains(&judgment.cand_solution_id)
            || !self.ref_ids.contains(&judgment.ref_solution_id)
        {
            return Err(ModelError::Invariant(format!(
                "pair ({}, {}) is not on the matrix axes",
                judgment.cand_solution_id, judgment.ref_solution_id
            )));
        }
        let key = (
            judgment.cand_solution_id.clone(),
            judgment.ref_solution_id.clone(),
        );
        if self.judgments.contains_key(&key) {
            return Err(ModelError::Invariant(format!(
                "pair ({}, {}) judged twice",
                key.0, key.1
            )));
        }
        self.judgments.insert(key, judgment);
        Ok(())
    }

    pub fn record_failure(&mut self, failure: PairFailure) {
        self.failures.push(failure);
    }

    pub fn failures(&self) -> &[PairFailure] {
        &self.failures
    }

    pub fn get(&self, cand_id: &str, ref_id: &str) -> Option<&MatchJudgment> {
        self.judgments.get(&(cand_id.to_string(), ref_id.to_string()))
    }

    /// Judgments in candidate-major order following the axis order.
    pub fn judgments(&self) -> impl Iterator<Item = &MatchJudgment> {
        self.cand_ids.iter().flat_map(move |c| {
            self.ref_ids
                .iter()
                .filter_map(move |r| self.judgments.get(&(c.clone(), r.clone())))
        })
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// A matrix is partial when a pair failed or the cross product is not covered.
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty() || self.judgments.len() != self.cand_ids.len() * self.ref_ids.len()
    }

    pub fn to_records(&self) -> Vec<MatchRecord> {
        self.judgments()
            .map(|j| MatchRecord::from_judgment(&self.dilemma_id, j))
            .collect()
    }

    /// Rebuilds a matrix from stored records, e.g. a `matches.jsonl` slice.
    pub fn from_records(
        dilemma_id: impl Into<String>,
        cand_ids: Vec<String>,
        ref_ids: Vec<String>,
        records: impl IntoIterator<Item = MatchRecord>,
    ) -> Result<Self, ModelError> {
        let mut m = MatchMatrix::new(dilemma_id, cand_ids, ref_ids);
        for r in records {
            m.insert(r.into_judgment()?)?;
        }
        Ok(m)
    }
}

/// SAA, EAA and their mean for one comparison, with the counts behind them.
///
/// Constructed only from counts, so the arithmetic invariants always hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScoresRepr", into = "ScoresRepr")]
pub struct AlignmentScores {
    n_agree: usize,
    n_conflict: usize,
    n_cand: usize,
    n_ref: usize,
    saa: Option<Rational>,
    eaa: Option<Rational>,
    avg: Option<Rational>,
}

impl AlignmentScores {
    pub fn from_counts(n_agree: usize, n_conflict: usize, n_cand: usize, n_ref: usize) -> Self {
        let saa = Rational::ratio(n_agree, n_cand + n_ref);
        let eaa = Rational::ratio(n_agree, n_agree + n_conflict);
        let avg = mean_of_pair(saa.as_ref(), eaa.as_ref());
        AlignmentScores {
            n_agree,
            n_conflict,
            n_cand,
            n_ref,
            saa,
            eaa,
            avg,
        }
    }

    pub fn n_agree(&self) -> usize {
        self.n_agree
    }
    pub fn n_conflict(&self) -> usize {
        self.n_conflict
    }
    pub fn n_cand(&self) -> usize {
        self.n_cand
    }
    pub fn n_ref(&self) -> usize {
        self.n_ref
    }
    pub fn saa(&self) -> Option<&Rational> {
        self.saa.as_ref()
    }
    pub fn eaa(&self) -> Option<&Rational> {
        self.eaa.as_ref()
    }
    pub fn avg(&self) -> Option<&Rational> {
        self.avg.as_ref()
    }

    /// Set when many-to-many matching pushes SAA above one.
    pub fn saa_exceeds_one(&self) -> bool {
        self.saa.as_ref().is_some_and(|s| *s > Rational::one())
    }
}

pub(crate) fn mean_of_pair(a: Option<&Rational>, b: Option<&Rational>) -> Option<Rational> {
    match (a, b) {
        (Some(a), Some(b)) => Some(&(a + b) / &Rational::from_integer(2)),
        _ => None,
    }
}

#[derive(Serialize, Deserialize)]
struct ScoresRepr {
    n_agree: usize,
    n_conflict: usize,
    n_cand: usize,
    n_ref: usize,
    saa: Option<Rational>,
    eaa: Option<Rational>,
    avg: Option<Rational>,
    #[serde(default)]
    saa_exceeds_one: bool,
}

impl TryFrom<ScoresRepr> for AlignmentScores {
    type Error = ModelError;

    fn try_from(r: ScoresRepr) -> Result<Self, Self::Error> {
        let s = AlignmentScores::from_counts(r.n_agree, r.n_conflict, r.n_cand, r.n_ref);
        if s.saa != r.saa || s.eaa != r.eaa || s.avg != r.avg {
            return Err(ModelError::Invariant(
                "stored scores disagree with their counts".into(),
            ));
        }
        Ok(s)
    }
}

impl From<AlignmentScores> for ScoresRepr {
    fn from(s: AlignmentScores) -> Self {
        let saa_exceeds_one = s.saa_exceeds_one();
        ScoresRepr {
            n_agree: s.n_agree,
            n_conflict: s.n_conflict,
            n_cand: s.n_cand,
            n_ref: s.n_ref,
            saa: s.saa,
            eaa: s.eaa,
            avg: s.avg,
            saa_exceeds_one,
        }
    }
}

/// Per-dilemma topic weights as produced by an external topic model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TopicMatrix {
    pub topic_names: Vec<String>,
    pub proportions: BTreeMap<String, Vec<Rational>>,
}

impl TopicMatrix {
    pub fn new(topic_names: Vec<String>) -> Self {
        TopicMatrix {
            topic_names,
            proportions: BTreeMap::new(),
        }
    }

    pub fn insert_row(&mut self, dilemma_id: impl Into<String>, weights: Vec<Rational>) -> Result<(), ModelError> {
        let dilemma_id = dilemma_id.into();
        if weights.len() != self.topic_names.len() {
            return Err(ModelError::TopicTable(format!(
                "row {dilemma_id} has {} weights for {} topics",
                weights.len(),
                self.topic_names.len()
            )));
        }
        if weights.iter().any(Rational::is_negative) {
            return Err(ModelError::TopicTable(format!("row {dilemma_id} has a negative weight")));
        }
        if self.proportions.insert(dilemma_id.clone(), weights).is_some() {
            return Err(ModelError::TopicTable(format!("duplicate row {dilemma_id}")));
        }
        Ok(())
    }

    /// Parses `topics.csv`: a `dilemma_id` column followed by one column per topic.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ModelError::TopicTable(e.to_string()))?
            .clone();
        if headers.get(0).map(str::trim) != Some("dilemma_id") {
            return Err(ModelError::TopicTable(
                "first column must be dilemma_id".into(),
            ));
        }
        let mut m = TopicMatrix::new(headers.iter().skip(1).map(|h| h.trim().to_string()).collect());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ModelError::TopicTable(e.to_string()))?;
            let id = rec.get(0).unwrap_or_default().trim().to_string();
            let weights = rec
                .iter()
                .skip(1)
                .map(|w| Rational::from_decimal_str(w).map_err(|e| ModelError::TopicTable(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            m.insert_row(id, weights)?;
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    MatchPair,
    Extraction,
    DilemmaMapping,
    DilemmaContent,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [
        TargetKind::MatchPair,
        TargetKind::Extraction,
        TargetKind::DilemmaMapping,
        TargetKind::DilemmaContent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::MatchPair => "match_pair",
            TargetKind::Extraction => "extraction",
            TargetKind::DilemmaMapping => "dilemma_mapping",
            TargetKind::DilemmaContent => "dilemma_content",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TargetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

/// One human label on a pipeline artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub target_kind: TargetKind,
    pub target_ref: String,
    pub label: String,
    pub issues: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

/// One episode transcript with the dilemma summaries from its metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub episode_id: String,
    pub turns: Vec<Turn>,
    pub summaries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aired_on: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub transcripts: Vec<Transcript>,
    pub dilemmas: Vec<Dilemma>,
    pub responses: Vec<AgentResponse>,
    pub solutions: Vec<Solution>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { kind: &'static str, id: String },
    DanglingReference { kind: &'static str, id: String, missing: String },
    EmptyField { kind: &'static str, id: String, field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { kind, id } => write!(f, "duplicate {kind} id {id}"),
            Violation::DanglingReference { kind, id, missing } => {
                write!(f, "{kind} {id} references unknown {missing}")
            }
            Violation::EmptyField { kind, id, field } => write!(f, "{kind} {id} has empty {field}"),
        }
    }
}

/// Checks referential integrity of a loaded corpus. An empty result means valid.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut episodes = HashSet::new();
    for t in &corpus.transcripts {
        if !episodes.insert(t.episode_id.as_str()) {
            out.push(Violation::DuplicateId { kind: "episode", id: t.episode_id.clone() });
        }
    }

    let mut dilemmas = HashSet::new();
    for d in &corpus.dilemmas {
        if !dilemmas.insert(d.id.as_str()) {
            out.push(Violation::DuplicateId { kind: "dilemma", id: d.id.clone() });
        }
        if d.body.trim().is_empty() {
            out.push(Violation::EmptyField { kind: "dilemma", id: d.id.clone(), field: "body" });
        }
        if d.question.trim().is_empty() {
            out.push(Violation::EmptyField { kind: "dilemma", id: d.id.clone(), field: "question" });
        }
        if !corpus.transcripts.is_empty() && !episodes.contains(d.episode_id.as_str()) {
            out.push(Violation::DanglingReference {
                kind: "dilemma",
                id: d.id.clone(),
                missing: format!("episode {}", d.episode_id),
            });
        }
    }

    let mut responses = BTreeSet::new();
    for r in &corpus.responses {
        if !responses.insert(r.id()) {
            out.push(Violation::DuplicateId { kind: "response", id: r.id() });
        }
        if !dilemmas.contains(r.dilemma_id.as_str()) {
            out.push(Violation::DanglingReference {
                kind: "response",
                id: r.id(),
                missing: format!("dilemma {}", r.dilemma_id),
            });
        }
    }

    let mut solutions = HashSet::new();
    for s in &corpus.solutions {
        if !solutions.insert(s.id.as_str()) {
            out.push(Violation::DuplicateId { kind: "solution", id: s.id.clone() });
        }
        if !dilemmas.contains(s.dilemma_id.as_str()) {
            out.push(Violation::DanglingReference {
                kind: "solution",
                id: s.id.clone(),
                missing: format!("dilemma {}", s.dilemma_id),
            });
        }
        if !corpus.responses.is_empty() && !responses.contains(&s.source_response_id) {
            out.push(Violation::DanglingReference {
                kind: "solution",
                id: s.id.clone(),
                missing: format!("response {}", s.source_response_id),
            });
        }
    }
    out
}
