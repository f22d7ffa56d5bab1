//! Pairwise solution matching under the component matching rules (CMRs).
//!
//! A judge only ever sees the two solution texts in positive form plus the
//! dilemma. Stance agreement is computed from the stored stances afterwards,
//! so permuting stances can change `stance_agree` bits but never `matched`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use crate::batch::run_bounded;
use crate::client::{ChatClient, ClientError, FieldType, SchemaHint};
use crate::extraction::render_dilemma;
use crate::model::{CmrVerdict, Dilemma, MatchJudgment, MatchMatrix, PairFailure, Solution};
use crate::template::{Template, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("solution {solution} belongs to dilemma {found}, expected {expected}")]
    DilemmaMismatch { solution: String, found: String, expected: String },
    #[error("judge verdict unusable: {0}")]
    Malformed(String),
}

pub trait PairJudge: Send + Sync {
    fn judge(&self, cand: &Solution, reference: &Solution, dilemma: &Dilemma) -> Result<CmrVerdict, MatchError>;

    /// Short identifier recorded in reports.
    fn describe(&self) -> String;
}

/// Lower-cases, collapses whitespace and drops trailing punctuation.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

/// Deterministic mock: two solutions match iff their normalized texts are equal.
/// Symmetric by construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct TextEqualityJudge;

impl PairJudge for TextEqualityJudge {
    fn judge(&self, cand: &Solution, reference: &Solution, _dilemma: &Dilemma) -> Result<CmrVerdict, MatchError> {
        let same = normalize_text(&cand.text) == normalize_text(&reference.text);
        Ok(CmrVerdict::all(same, if same { "normalized texts equal" } else { "normalized texts differ" }))
    }

    fn describe(&self) -> String {
        "text-equality".into()
    }
}

pub fn matching_schema() -> SchemaHint {
    SchemaHint::new("matching")
        .required("order", FieldType::Bool)
        .required("semantics", FieldType::Bool)
        .required("conditions", FieldType::Bool)
        .required("entities", FieldType::Bool)
        .optional("rationale", FieldType::String)
        .optional("match", FieldType::Bool)
}

#[derive(Deserialize)]
struct JudgeReply {
    order: bool,
    semantics: bool,
    conditions: bool,
    entities: bool,
    #[serde(default)]
    rationale: String,
    #[serde(rename = "match")]
    matched: Option<bool>,
}

/// Model-backed judge with a pair-level memo.
pub struct LlmJudge {
    client: ChatClient,
    template: Template,
    template_hash: String,
    memo: Mutex<HashMap<(String, String, String, String), CmrVerdict>>,
    overrides: AtomicU64,
}

impl LlmJudge {
    pub fn new(client: ChatClient, template: Template) -> Self {
        let template_hash = template.hash();
        LlmJudge {
            client,
            template,
            template_hash,
            memo: Mutex::new(HashMap::new()),
            overrides: AtomicU64::new(0),
        }
    }

    /// How many replies carried a `match` field that disagreed with the
    /// rule verdicts and was overridden.
    pub fn overridden_matches(&self) -> u64 {
        self.overrides.load(Ordering::SeqCst)
    }
}

impl PairJudge for LlmJudge {
    fn judge(&self, cand: &Solution, reference: &Solution, dilemma: &Dilemma) -> Result<CmrVerdict, MatchError> {
        let key = (
            normalize_text(&cand.text),
            normalize_text(&reference.text),
            dilemma.id.clone(),
            self.template_hash.clone(),
        );
        if let Some(v) = self.memo.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let prompt = self.template.render(&[
            ("dilemma", &render_dilemma(dilemma)),
            ("solution_a", &cand.text),
            ("solution_b", &reference.text),
        ])?;
        let completion = self.client.complete(&self.client.request(prompt).with_schema(matching_schema()))?;
        let parsed = completion
            .parsed
            .ok_or_else(|| MatchError::Malformed("no structured output".into()))?;
        let reply: JudgeReply = serde_json::from_value(parsed).map_err(|e| MatchError::Malformed(e.to_string()))?;
        let verdict = CmrVerdict {
            order_ok: reply.order,
            semantics_ok: reply.semantics,
            conditions_ok: reply.conditions,
            entities_ok: reply.entities,
            rationale: reply.rationale,
        };
        if let Some(m) = reply.matched {
            if m != verdict.no_rule_violated() {
                self.overrides.fetch_add(1, Ordering::SeqCst);
                tracing::warn!(
                    cand = %cand.id,
                    reference = %reference.id,
                    "judge `match` disagrees with its rule verdicts; using the conjunction"
                );
            }
        }
        self.memo.lock().unwrap().insert(key, verdict.clone());
        Ok(verdict)
    }

    fn describe(&self) -> String {
        format!("llm:{}:{}", self.client.model_ref(), self.template_hash)
    }
}

fn check_dilemma(s: &Solution, dilemma: &Dilemma) -> Result<(), MatchError> {
    if s.dilemma_id == dilemma.id {
        Ok(())
    } else {
        Err(MatchError::DilemmaMismatch {
            solution: s.id.clone(),
            found: s.dilemma_id.clone(),
            expected: dilemma.id.clone(),
        })
    }
}

/// Judges one (candidate, reference) pair.
pub fn judge_pair(
    cand: &Solution,
    reference: &Solution,
    dilemma: &Dilemma,
    judge: &dyn PairJudge,
) -> Result<MatchJudgment, MatchError> {
    check_dilemma(cand, dilemma)?;
    check_dilemma(reference, dilemma)?;
    let verdicts = judge.judge(cand, reference, dilemma)?;
    Ok(MatchJudgment::new(cand, reference, verdicts))
}

/// Judges the full cross product of two solution sets.
///
/// Pairs run with at most `parallelism` in flight; the matrix is assembled
/// afterwards in axis order, so the result does not depend on scheduling.
/// Failed pairs are recorded and leave the matrix partial.
pub fn match_all(
    cand_set: &[Solution],
    ref_set: &[Solution],
    dilemma: &Dilemma,
    judge: &dyn PairJudge,
    parallelism: usize,
) -> MatchMatrix {
    let mut matrix = MatchMatrix::new(
        dilemma.id.clone(),
        cand_set.iter().map(|s| s.id.clone()).collect(),
        ref_set.iter().map(|s| s.id.clone()).collect(),
    );
    let pairs: Vec<(&Solution, &Solution)> = cand_set
        .iter()
        .flat_map(|c| ref_set.iter().map(move |r| (c, r)))
        .collect();
    let results = run_bounded(&pairs, parallelism, |(c, r)| judge_pair(c, r, dilemma, judge));
    for ((c, r), result) in pairs.iter().zip(results) {
        let outcome = result.map_err(|e| e.to_string()).and_then(|j| matrix.insert(j).map_err(|e| e.to_string()));
        if let Err(error) = outcome {
            matrix.record_failure(PairFailure {
                cand_solution_id: c.id.clone(),
                ref_solution_id: r.id.clone(),
                error,
            });
        }
    }
    matrix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ScriptEntry, ScriptedChat};
    use crate::model::Stance;
    use crate::template::TemplateSet;
    use std::sync::Arc;

    fn dilemma() -> Dilemma {
        Dilemma {
            id: "d1".into(),
            episode_id: "e".into(),
            summary: String::new(),
            body: "Jeg er ked af det.".into(),
            question: "Hvad skal jeg gøre?".into(),
        }
    }

    fn sol(id: &str, text: &str, stance: Stance) -> Solution {
        Solution {
            id: id.into(),
            dilemma_id: "d1".into(),
            agent_id: id.chars().next().unwrap().to_string(),
            text: text.into(),
            stance,
            negation_flipped: false,
            source_response_id: String::new(),
        }
    }

    #[test]
    fn mock_judge_identical_same_stance() {
        let j = judge_pair(
            &sol("c1", "Køb et æble", Stance::Advised),
            &sol("r1", "køb et æble.", Stance::Advised),
            &dilemma(),
            &TextEqualityJudge,
        )
        .unwrap();
        assert!(j.matched && j.stance_agree);
    }

    #[test]
    fn mock_judge_identical_opposite_stance() {
        let j = judge_pair(
            &sol("c1", "Køb et æble", Stance::Advised),
            &sol("r1", "Køb et æble", Stance::NotAdvised),
            &dilemma(),
            &TextEqualityJudge,
        )
        .unwrap();
        assert!(j.matched && !j.stance_agree);
    }

    #[test]
    fn llm_judge_ignores_motivation_per_contract() {
        let reply = r#"{"rationale":"same action, motivation differs","order":true,"semantics":true,"conditions":true,"entities":true,"match":true}"#;
        let backend = Arc::new(ScriptedChat::new(
            "mock",
            vec![ScriptEntry::containing(&["Buy an apple to feel better", "Buy an apple to have one"], reply)],
        ));
        let judge = LlmJudge::new(ChatClient::new(backend.clone()), TemplateSet::bundled().matching);
        let j = judge_pair(
            &sol("c1", "Buy an apple to feel better", Stance::Advised),
            &sol("r1", "Buy an apple to have one", Stance::Advised),
            &dilemma(),
            &judge,
        )
        .unwrap();
        assert!(j.matched);
        assert_eq!(j.verdicts.rationale, "same action, motivation differs");
        // the prompt never reveals stances
        let prompt = &backend.captured()[0].user_prompt;
        assert!(!prompt.contains("not_advised") && !prompt.contains("(advised)"));
    }

    #[test]
    fn inconsistent_match_flag_is_overridden() {
        let reply = r#"{"rationale":"","order":true,"semantics":false,"conditions":true,"entities":true,"match":true}"#;
        let backend = Arc::new(ScriptedChat::new("mock", vec![ScriptEntry::fallback(reply)]));
        let judge = LlmJudge::new(ChatClient::new(backend), TemplateSet::bundled().matching);
        let j = judge_pair(
            &sol("c1", "a", Stance::Advised),
            &sol("r1", "b", Stance::Advised),
            &dilemma(),
            &judge,
        )
        .unwrap();
        assert!(!j.matched);
        assert_eq!(judge.overridden_matches(), 1);
    }

    #[test]
    fn memo_avoids_repeat_calls() {
        let reply = r#"{"order":true,"semantics":true,"conditions":true,"entities":true}"#;
        let backend = Arc::new(ScriptedChat::new("mock", vec![ScriptEntry::fallback(reply)]));
        let judge = LlmJudge::new(ChatClient::new(backend.clone()), TemplateSet::bundled().matching);
        let c = sol("c1", "Ring til mor", Stance::Advised);
        let r = sol("r1", "Ring til mor", Stance::NotAdvised);
        judge_pair(&c, &r, &dilemma(), &judge).unwrap();
        let mut c2 = c.clone();
        c2.id = "c2".into();
        c2.text = "ring til mor.".into();
        judge_pair(&c2, &r, &dilemma(), &judge).unwrap();
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn cross_product_and_empty_sets() {
        let cands: Vec<_> = (0..4).map(|i| sol(&format!("c{i}"), &format!("t{i}"), Stance::Advised)).collect();
        let refs: Vec<_> = (0..4).map(|i| sol(&format!("r{i}"), &format!("t{}", i % 2), Stance::Advised)).collect();
        let m = match_all(&cands, &refs, &dilemma(), &TextEqualityJudge, 3);
        assert_eq!(m.len(), 16);
        assert!(!m.is_partial());
        let m = match_all(&[], &refs, &dilemma(), &TextEqualityJudge, 3);
        assert_eq!(m.len(), 0);
        assert!(!m.is_partial());
    }

    #[test]
    fn failures_mark_matrix_partial() {
        let backend = Arc::new(ScriptedChat::new(
            "mock",
            vec![ScriptEntry::containing(&["Solution A: ok"], r#"{"order":true,"semantics":true,"conditions":true,"entities":true}"#)],
        ));
        let judge = LlmJudge::new(ChatClient::new(backend), TemplateSet::bundled().matching);
        let cands = vec![sol("c1", "ok", Stance::Advised), sol("c2", "bad", Stance::Advised)];
        let refs = vec![sol("r1", "x", Stance::Advised)];
        let m = match_all(&cands, &refs, &dilemma(), &judge, 2);
        assert!(m.is_partial());
        assert_eq!(m.len(), 1);
        assert_eq!(m.failures()[0].cand_solution_id, "c2");
    }

    #[test]
    fn wrong_dilemma_is_rejected() {
        let mut c = sol("c1", "x", Stance::Advised);
        c.dilemma_id = "other".into();
        let r = sol("r1", "x", Stance::Advised);
        assert!(matches!(
            judge_pair(&c, &r, &dilemma(), &TextEqualityJudge),
            Err(MatchError::DilemmaMismatch { .. })
        ));
    }
}
