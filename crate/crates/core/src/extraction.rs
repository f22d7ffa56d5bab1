//! Turning a (dilemma, response) pair into stance-tagged solutions, and the
//! clean-up pass that follows.

use std::collections::{BTreeSet, HashSet};

use serde::Deserialize;
use serde_json::Value;

use crate::client::{ChatClient, ClientError, FieldType, SchemaHint};
use crate::lexicon::NegationLexicon;
use crate::model::{AgentResponse, Dilemma, Solution, Stance};
use crate::template::{Template, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("solutions from several dilemmas passed to one postprocess call: {0:?}")]
    MixedDilemmas(Vec<String>),
}

/// Result of [`normalize_negation`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub stance: Stance,
    pub flipped: bool,
}

/// Rewrites a negated recommendation into positive form and flips its stance.
///
/// Constructions are stripped until none matches, so the result never starts
/// with one and a second application is the identity. `flipped` reports an
/// odd number of strips; a double negation leaves the stance unchanged.
pub fn normalize_negation(text: &str, stance: Stance, lexicon: &NegationLexicon) -> Normalized {
    let original = text.trim();
    let mut current = original.to_string();
    let mut strips = 0usize;
    while let Some(next) = lexicon.strip_once(&current) {
        current = next;
        strips += 1;
    }
    if strips > 0 && original.chars().next().is_some_and(char::is_uppercase) {
        current = capitalize(&current);
    }
    let flipped = strips % 2 == 1;
    Normalized {
        text: if strips == 0 { text.to_string() } else { current },
        stance: if flipped { stance.flip() } else { stance },
        flipped,
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// How a dilemma is shown to the models: the body followed by its question.
pub fn render_dilemma(d: &Dilemma) -> String {
    format!("{}\n\n{}", d.body.trim(), d.question.trim())
}

pub fn extraction_schema() -> SchemaHint {
    SchemaHint::new("extraction")
        .required("advised", FieldType::StringList)
        .required("not_advised", FieldType::StringList)
}

pub fn postprocess_schema() -> SchemaHint {
    SchemaHint::new("postprocess")
        .optional("duplicates", FieldType::Array)
        .optional("remove", FieldType::Array)
        .optional("stance_fixes", FieldType::Array)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extracted {
    pub advised: Vec<Solution>,
    pub not_advised: Vec<Solution>,
}

impl Extracted {
    /// Advised first, then not advised, each in model order.
    pub fn into_vec(self) -> Vec<Solution> {
        let mut v = self.advised;
        v.extend(self.not_advised);
        v
    }

    pub fn len(&self) -> usize {
        self.advised.len() + self.not_advised.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Extractor {
    pub client: ChatClient,
    pub template: Template,
    pub lexicon: NegationLexicon,
}

impl Extractor {
    pub fn new(client: ChatClient, template: Template, lexicon: NegationLexicon) -> Self {
        Extractor { client, template, lexicon }
    }

    /// Extracts advised and not-advised solutions from one response.
    ///
    /// Ids are `<response id>:a<i>` / `:n<i>` by position in the model's
    /// lists. Items whose stance flips during normalization move to the
    /// other list but keep their id.
    pub fn extract(&self, dilemma: &Dilemma, response: &AgentResponse) -> Result<Extracted, ExtractionError> {
        if response.text.trim().is_empty() {
            return Ok(Extracted::default());
        }
        let prompt = self.template.render(&[
            ("dilemma", &render_dilemma(dilemma)),
            ("response", response.text.trim()),
        ])?;
        let request = self.client.request(prompt).with_schema(extraction_schema());
        let completion = self.client.complete(&request)?;
        let parsed = completion.parsed.unwrap_or(Value::Null);

        let response_id = response.id();
        let mut out = Extracted::default();
        for (key, tag, stance) in [("advised", 'a', Stance::Advised), ("not_advised", 'n', Stance::NotAdvised)] {
            let items = parsed[key].as_array().cloned().unwrap_or_default();
            for (i, item) in items.iter().enumerate() {
                let Some(text) = item.as_str().map(str::trim).filter(|t| !t.is_empty()) else {
                    continue;
                };
                let n = normalize_negation(text, stance, &self.lexicon);
                let solution = Solution {
                    id: format!("{response_id}:{tag}{i}"),
                    dilemma_id: dilemma.id.clone(),
                    agent_id: response.agent_id.clone(),
                    text: n.text,
                    stance: n.stance,
                    negation_flipped: n.flipped,
                    source_response_id: response_id.clone(),
                };
                match solution.stance {
                    Stance::Advised => out.advised.push(solution),
                    Stance::NotAdvised => out.not_advised.push(solution),
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Default, Deserialize)]
struct PostprocessVerdict {
    #[serde(default)]
    duplicates: Vec<DuplicateNote>,
    #[serde(default)]
    remove: Vec<RemoveNote>,
    #[serde(default)]
    stance_fixes: Vec<StanceFix>,
}

#[derive(Debug, Deserialize)]
struct DuplicateNote {
    index: usize,
    duplicate_of: usize,
}

#[derive(Debug, Deserialize)]
struct RemoveNote {
    index: usize,
    #[serde(default)]
    reason: String,
}

#[derive(Debug, Deserialize)]
struct StanceFix {
    index: usize,
    stance: Stance,
}

/// What the clean-up pass changed, for audit logs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PostprocessLog {
    pub exact_duplicates: Vec<String>,
    pub merged: Vec<(String, String)>,
    pub removed: Vec<(String, String)>,
    pub stance_fixed: Vec<String>,
    pub ignored_notes: usize,
}

pub struct Postprocessor {
    pub client: ChatClient,
    pub template: Template,
    pub lexicon: NegationLexicon,
}

impl Postprocessor {
    pub fn new(client: ChatClient, template: Template, lexicon: NegationLexicon) -> Self {
        Postprocessor { client, template, lexicon }
    }

    pub fn postprocess(&self, solutions: Vec<Solution>, dilemma: &Dilemma) -> Result<Vec<Solution>, ExtractionError> {
        self.postprocess_logged(solutions, dilemma).map(|(s, _)| s)
    }

    /// Normalizes negations, drops exact duplicates, then applies the judge's
    /// merge, removal and stance notes. Survivors keep input order and no
    /// solution is ever created.
    pub fn postprocess_logged(
        &self,
        solutions: Vec<Solution>,
        dilemma: &Dilemma,
    ) -> Result<(Vec<Solution>, PostprocessLog), ExtractionError> {
        let ids: BTreeSet<&str> = solutions.iter().map(|s| s.dilemma_id.as_str()).collect();
        if ids.len() > 1 || ids.iter().any(|id| *id != dilemma.id) {
            return Err(ExtractionError::MixedDilemmas(ids.into_iter().map(String::from).collect()));
        }
        let mut log = PostprocessLog::default();

        let normalized: Vec<Solution> = solutions
            .into_iter()
            .map(|mut s| {
                let n = normalize_negation(&s.text, s.stance, &self.lexicon);
                s.text = n.text;
                s.stance = n.stance;
                s.negation_flipped ^= n.flipped;
                s
            })
            .collect();
        let mut items = exact_dedup(normalized, &mut log.exact_duplicates);
        if items.is_empty() {
            return Ok((items, log));
        }

        let listing = items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("[{i}] ({}) {}", s.stance, s.text))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.template.render(&[
            ("dilemma", &render_dilemma(dilemma)),
            ("solutions", &listing),
        ])?;
        let completion = self.client.complete(&self.client.request(prompt).with_schema(postprocess_schema()))?;
        let verdict: PostprocessVerdict = completion
            .parsed
            .and_then(|v| serde_json::from_value(v).ok())
            .unwrap_or_else(|| {
                tracing::warn!(dilemma = %dilemma.id, "postprocess verdict has malformed entries; ignoring it");
                log.ignored_notes += 1;
                PostprocessVerdict::default()
            });

        let n = items.len();
        let mut dropped = vec![false; n];
        for d in &verdict.duplicates {
            let (keep, drop) = (d.index.min(d.duplicate_of), d.index.max(d.duplicate_of));
            if drop >= n || keep == drop || items[keep].agent_id != items[drop].agent_id {
                log.ignored_notes += 1;
                continue;
            }
            if !dropped[drop] {
                dropped[drop] = true;
                log.merged.push((items[drop].id.clone(), items[keep].id.clone()));
            }
        }
        for r in &verdict.remove {
            if r.index >= n {
                log.ignored_notes += 1;
                continue;
            }
            if !dropped[r.index] {
                dropped[r.index] = true;
                log.removed.push((items[r.index].id.clone(), r.reason.clone()));
            }
        }
        for f in &verdict.stance_fixes {
            if f.index >= n {
                log.ignored_notes += 1;
                continue;
            }
            if !dropped[f.index] && items[f.index].stance != f.stance {
                items[f.index].stance = f.stance;
                log.stance_fixed.push(items[f.index].id.clone());
            }
        }
        let survivors: Vec<Solution> = items
            .into_iter()
            .zip(dropped)
            .filter_map(|(s, d)| (!d).then_some(s))
            .collect();
        Ok((exact_dedup(survivors, &mut log.exact_duplicates), log))
    }
}

/// Keeps the first solution for each (agent, text, stance).
fn exact_dedup(solutions: Vec<Solution>, dropped: &mut Vec<String>) -> Vec<Solution> {
    let mut seen = HashSet::new();
    solutions
        .into_iter()
        .filter(|s| {
            let fresh = seen.insert((s.agent_id.clone(), s.text.clone(), s.stance));
            if !fresh {
                dropped.push(s.id.clone());
            }
            fresh
        })
        .collect()
}
