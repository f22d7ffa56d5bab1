//! From transcripts and one-line summaries to located sections and full
//! dilemmas.

use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::batch::run_bounded;
use crate::client::{ChatClient, ClientError, EmbedClient, EmbeddingVector, FieldType, SchemaHint};
use crate::lexicon::WordList;
use crate::model::{AgentResponse, Dilemma, Transcript};
use crate::template::{Template, TemplateError};

/// Agent id under which the panel's discussion is stored as a response.
pub const PANEL_AGENT: &str = "panel";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("chunk size and stride must satisfy 1 <= stride <= size (got size {size}, stride {stride})")]
    InvalidWindow { size: usize, stride: usize },
    #[error("section has {sentences} sentences, above the ceiling of {ceiling}")]
    SectionTooLong { sentences: usize, ceiling: usize },
    #[error("empty section")]
    EmptySection,
    #[error("no chunks to search")]
    NoChunks,
    #[error("unusable reply: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub speaker: String,
    pub text: String,
}

/// Half-open range of sentence indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

const CLOSERS: &[char] = &['"', '\'', '\u{201D}', '\u{2019}', '\u{BB}', ')'];
const OPENERS: &[char] = &['"', '\'', '\u{201C}', '\u{201E}', '\u{AB}', '\u{2018}'];

fn last_word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\S+$").unwrap())
}

/// Rule-based sentence split: a run of `.`, `!` or `?` (plus closing quotes)
/// followed by whitespace and a capital letter or an opening quote ends a
/// sentence, unless the word before a `.` is a listed abbreviation.
pub fn segment_sentences(text: &str, abbreviations: &WordList) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j
            && chars
                .get(k)
                .is_some_and(|&(_, n)| n.is_uppercase() || OPENERS.contains(&n));
        let abbreviation = chars[j - 1].1 == '.'
            && last_word_re()
                .find(&text[start..end])
                .is_some_and(|w| abbreviations.contains(w.as_str().trim_start_matches(OPENERS)));
        if boundary && !abbreviation {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = chars[k].0;
        }
        i = j.max(i + 1);
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// Sentences of a transcript in order; turn boundaries are sentence boundaries.
pub fn transcript_sentences(t: &Transcript, abbreviations: &WordList) -> Vec<Sentence> {
    t.turns
        .iter()
        .flat_map(|turn| {
            segment_sentences(&turn.text, abbreviations)
                .into_iter()
                .map(|text| Sentence { speaker: turn.speaker.clone(), text })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub span: Span,
    pub text: String,
}

/// Sliding windows of `size` sentences moved by `stride`. The last window
/// is the first one reaching the end and may be shorter.
pub fn chunk(sentences: &[Sentence], size: usize, stride: usize) -> Result<Vec<Chunk>, CorpusError> {
    if size == 0 || stride == 0 || stride > size {
        return Err(CorpusError::InvalidWindow { size, stride });
    }
    let n = sentences.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push(Chunk {
            index: out.len(),
            span: Span::new(start, end),
            text: sentences[start..end].iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "),
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Index of the first sentence in the final quarter: ceil(0.75 N).
pub fn award_window_start(n: usize) -> usize {
    (3 * n).div_ceil(4)
}

/// Finds the end-of-episode prize segment: the first sentence at or after
/// ceil(0.75 N) containing a keyword, through the end.
pub fn detect_award_section(sentences: &[Sentence], keywords: &WordList) -> Option<Span> {
    let n = sentences.len();
    let from = award_window_start(n);
    sentences[from..]
        .iter()
        .position(|s| {
            let lower = s.text.to_lowercase();
            keywords.iter().any(|k| lower.contains(k))
        })
        .map(|i| Span::new(from + i, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingPath {
    #[serde(rename = "top1-verified")]
    Top1Verified,
    FallbackEarliest,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub chunk_index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub chunk_index: Option<usize>,
    pub path: MappingPath,
    pub top_similarities: Vec<Similarity>,
}

/// One line of `audit.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub episode_id: String,
    pub summary: String,
    pub chunk_index: Option<usize>,
    pub path: MappingPath,
    pub top_similarities: Vec<Similarity>,
}

pub fn verify_schema() -> SchemaHint {
    SchemaHint::new("verify")
        .optional("reasoning", FieldType::String)
        .required("introduced", FieldType::Bool)
}

pub fn dilemma_schema() -> SchemaHint {
    SchemaHint::new("dilemma")
        .required("body", FieldType::String)
        .required("question", FieldType::String)
}

/// Embedding retrieval plus chat verification of where a dilemma starts.
pub struct SectionLocator {
    embed: EmbedClient,
    verifier: ChatClient,
    template: Template,
    audit_top_k: usize,
}

impl SectionLocator {
    pub fn new(embed: EmbedClient, verifier: ChatClient, template: Template) -> Self {
        SectionLocator { embed, verifier, template, audit_top_k: 5 }
    }

    pub fn embed_chunks(&self, chunks: &[Chunk]) -> Result<Vec<EmbeddingVector>, CorpusError> {
        Ok(chunks.iter().map(|c| self.embed.embed(&c.text)).collect::<Result<_, _>>()?)
    }

    pub fn verify(&self, summary: &str, chunk: &Chunk) -> Result<bool, CorpusError> {
        let prompt = self.template.render(&[("summary", summary), ("chunk", &chunk.text)])?;
        let reply = self.verifier.complete(&self.verifier.request(prompt).with_schema(verify_schema()))?;
        reply
            .parsed
            .as_ref()
            .and_then(|v| v.get("introduced"))
            .and_then(|v| v.as_bool())
            .ok_or_else(|| CorpusError::Malformed("verifier reply lacks `introduced`".into()))
    }

    /// Proposes the most similar non-excluded chunk (earliest on ties) and
    /// asks the verifier. On rejection the remaining candidates are verified
    /// in transcript order and the first positive wins.
    pub fn map_summary_to_section(
        &self,
        summary: &str,
        chunks: &[Chunk],
        embeddings: &[EmbeddingVector],
        excluded: Option<Span>,
    ) -> Result<Located, CorpusError> {
        if chunks.is_empty() {
            return Err(CorpusError::NoChunks);
        }
        let query = self.embed.embed(summary)?;
        let mut ranked: Vec<Similarity> = chunks
            .iter()
            .zip(embeddings)
            .filter(|(c, _)| !excluded.is_some_and(|x| x.intersects(&c.span)))
            .map(|(c, e)| Similarity { chunk_index: c.index, similarity: query.cosine(e).unwrap_or(0.0) })
            .collect();
        ranked.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.chunk_index.cmp(&b.chunk_index)));
        let top_similarities: Vec<Similarity> = ranked.iter().take(self.audit_top_k).cloned().collect();
        let Some(top) = ranked.first() else {
            return Ok(Located { chunk_index: None, path: MappingPath::Unresolved, top_similarities });
        };
        if self.verify(summary, &chunks[top.chunk_index])? {
            return Ok(Located {
                chunk_index: Some(top.chunk_index),
                path: MappingPath::Top1Verified,
                top_similarities,
            });
        }
        let mut rest: Vec<usize> = ranked[1..].iter().map(|s| s.chunk_index).collect();
        rest.sort_unstable();
        for idx in rest {
            if self.verify(summary, &chunks[idx])? {
                return Ok(Located { chunk_index: Some(idx), path: MappingPath::FallbackEarliest, top_similarities });
            }
        }
        Ok(Located { chunk_index: None, path: MappingPath::Unresolved, top_similarities })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub summary_index: usize,
    pub span: Span,
}

/// Two summaries that landed on the same chunk; the later one is dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub summary_index: usize,
    pub kept_summary_index: usize,
    pub chunk_start: usize,
}

/// Cuts the transcript at the located chunk starts. Each section runs to the
/// next start, or to the award section or transcript end for the last one.
///
/// `located` holds (summary index, chunk start sentence).
pub fn split_into_sections(
    located: &[(usize, usize)],
    n_sentences: usize,
    award: Option<Span>,
) -> (Vec<Section>, Vec<OrderViolation>) {
    let mut sorted = located.to_vec();
    sorted.sort_by_key(|&(k, start)| (start, k));
    let mut kept: Vec<(usize, usize)> = Vec::new();
    let mut violations = Vec::new();
    for (k, start) in sorted {
        match kept.last() {
            Some(&(prev, prev_start)) if prev_start == start => violations.push(OrderViolation {
                summary_index: k,
                kept_summary_index: prev,
                chunk_start: start,
            }),
            _ => kept.push((k, start)),
        }
    }
    let limit = award.map_or(n_sentences, |a| a.start.min(n_sentences));
    let sections = kept
        .iter()
        .enumerate()
        .map(|(i, &(k, start))| {
            let end = kept.get(i + 1).map_or(limit, |&(_, next)| next.min(limit)).max(start);
            Section { summary_index: k, span: Span::new(start, end) }
        })
        .collect();
    (sections, violations)
}

/// Sentences rendered as `speaker: text` lines, merging consecutive
/// sentences of one speaker.
pub fn render_section(sentences: &[Sentence]) -> String {
    let mut lines: Vec<(String, Vec<&str>)> = Vec::new();
    for s in sentences {
        match lines.last_mut() {
            Some((speaker, texts)) if *speaker == s.speaker => texts.push(&s.text),
            _ => lines.push((s.speaker.clone(), vec![&s.text])),
        }
    }
    lines
        .into_iter()
        .map(|(speaker, texts)| format!("{speaker}: {}", texts.join(" ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Nearest-rank percentile (`pct` in 1..=100) of the values.
pub fn percentile_ceiling(values: &[usize], pct: u32) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = (pct.clamp(1, 100) as usize * v.len()).div_ceil(100);
    Some(v[rank.max(1) - 1])
}

#[derive(Deserialize)]
struct DilemmaReply {
    body: String,
    question: String,
}

pub struct DilemmaExtractor {
    client: ChatClient,
    template: Template,
}

impl DilemmaExtractor {
    pub fn new(client: ChatClient, template: Template) -> Self {
        DilemmaExtractor { client, template }
    }

    /// Returns (body, question). Sections longer than `ceiling` sentences are
    /// refused before any model call.
    pub fn extract_full_dilemma(
        &self,
        section: &[Sentence],
        summary: &str,
        ceiling: Option<usize>,
    ) -> Result<(String, String), CorpusError> {
        if section.is_empty() {
            return Err(CorpusError::EmptySection);
        }
        if let Some(ceiling) = ceiling.filter(|&c| section.len() > c) {
            return Err(CorpusError::SectionTooLong { sentences: section.len(), ceiling });
        }
        let prompt = self
            .template
            .render(&[("summary", summary), ("section", &render_section(section))])?;
        let reply = self.client.complete(&self.client.request(prompt).with_schema(dilemma_schema()))?;
        let parsed = reply.parsed.ok_or_else(|| CorpusError::Malformed("no structured output".into()))?;
        let r: DilemmaReply = serde_json::from_value(parsed).map_err(|e| CorpusError::Malformed(e.to_string()))?;
        Ok((r.body.trim().to_string(), r.question.trim().to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ceiling {
    None,
    Fixed(usize),
    /// Nearest-rank percentile of section lengths over the whole corpus.
    Percentile(u32),
}

#[derive(Clone, Debug)]
pub struct IngestConfig {
    pub chunk_size: usize,
    pub stride: usize,
    pub ceiling: Ceiling,
    pub abbreviations: WordList,
    pub award_keywords: WordList,
    pub parallelism: usize,
}

/// A summary or episode that produced no dilemma, and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub episode_id: String,
    pub summary_index: Option<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestOutput {
    pub dilemmas: Vec<Dilemma>,
    pub panel_responses: Vec<AgentResponse>,
    pub audit: Vec<AuditRecord>,
    pub skipped: Vec<SkipRecord>,
    pub ceiling: Option<usize>,
}

struct LocatedEpisode {
    episode_id: String,
    summaries: Vec<String>,
    sentences: Vec<Sentence>,
    sections: Vec<Section>,
}

pub fn dilemma_id(episode_id: &str, summary_index: usize) -> String {
    format!("{episode_id}-d{summary_index}")
}

fn locate_episode(
    t: &Transcript,
    cfg: &IngestConfig,
    locator: &SectionLocator,
) -> Result<(LocatedEpisode, Vec<AuditRecord>, Vec<SkipRecord>), CorpusError> {
    let sentences = transcript_sentences(t, &cfg.abbreviations);
    let chunks = chunk(&sentences, cfg.chunk_size, cfg.stride)?;
    let award = detect_award_section(&sentences, &cfg.award_keywords);
    let embeddings = locator.embed_chunks(&chunks)?;
    let mut audit = Vec::new();
    let mut skipped = Vec::new();
    let mut located = Vec::new();
    for (k, summary) in t.summaries.iter().enumerate() {
        let l = locator.map_summary_to_section(summary, &chunks, &embeddings, award)?;
        if let Some(idx) = l.chunk_index {
            located.push((k, chunks[idx].span.start));
        } else {
            skipped.push(SkipRecord {
                episode_id: t.episode_id.clone(),
                summary_index: Some(k),
                reason: "unresolved: no chunk verified".into(),
            });
        }
        audit.push(AuditRecord {
            episode_id: t.episode_id.clone(),
            summary: summary.clone(),
            chunk_index: l.chunk_index,
            path: l.path,
            top_similarities: l.top_similarities,
        });
    }
    let (sections, violations) = split_into_sections(&located, sentences.len(), award);
    skipped.extend(violations.into_iter().map(|v| SkipRecord {
        episode_id: t.episode_id.clone(),
        summary_index: Some(v.summary_index),
        reason: format!(
            "order violation: same chunk as summary {} (sentence {})",
            v.kept_summary_index, v.chunk_start
        ),
    }));
    Ok((
        LocatedEpisode { episode_id: t.episode_id.clone(), summaries: t.summaries.clone(), sentences, sections },
        audit,
        skipped,
    ))
}

/// Runs locating for every episode, then full-dilemma extraction for every
/// section. Output order follows the input order regardless of parallelism.
/// The panel discussion of each section is returned as a response of
/// [`PANEL_AGENT`].
pub fn ingest(
    transcripts: &[Transcript],
    cfg: &IngestConfig,
    locator: &SectionLocator,
    extractor: &DilemmaExtractor,
    created_at: DateTime<Utc>,
) -> IngestOutput {
    let mut out = IngestOutput::default();
    let usable: Vec<&Transcript> = transcripts
        .iter()
        .filter(|t| {
            let ok = !t.summaries.is_empty() && !t.turns.is_empty();
            if !ok {
                out.skipped.push(SkipRecord {
                    episode_id: t.episode_id.clone(),
                    summary_index: None,
                    reason: "no summaries or no turns".into(),
                });
            }
            ok
        })
        .collect();
    let results = run_bounded(&usable, cfg.parallelism, |t| locate_episode(t, cfg, locator));
    let mut episodes = Vec::new();
    for (t, r) in usable.iter().zip(results) {
        match r {
            Ok((ep, audit, skipped)) => {
                out.audit.extend(audit);
                out.skipped.extend(skipped);
                episodes.push(ep);
            }
            Err(e) => out.skipped.push(SkipRecord {
                episode_id: t.episode_id.clone(),
                summary_index: None,
                reason: format!("locating failed: {e}"),
            }),
        }
    }
    let lengths: Vec<usize> = episodes.iter().flat_map(|e| e.sections.iter().map(|s| s.span.len())).collect();
    out.ceiling = match cfg.ceiling {
        Ceiling::None => None,
        Ceiling::Fixed(n) => Some(n),
        Ceiling::Percentile(p) => percentile_ceiling(&lengths, p),
    };
    let jobs: Vec<(&LocatedEpisode, &Section)> =
        episodes.iter().flat_map(|e| e.sections.iter().map(move |s| (e, s))).collect();
    let extracted = run_bounded(&jobs, cfg.parallelism, |(e, s)| {
        let sentences = &e.sentences[s.span.start..s.span.end];
        extractor.extract_full_dilemma(sentences, &e.summaries[s.summary_index], out.ceiling)
    });
    for ((e, s), r) in jobs.iter().zip(extracted) {
        match r {
            Ok((body, question)) => {
                let id = dilemma_id(&e.episode_id, s.summary_index);
                out.panel_responses.push(AgentResponse {
                    agent_id: PANEL_AGENT.into(),
                    dilemma_id: id.clone(),
                    text: render_section(&e.sentences[s.span.start..s.span.end]),
                    created_at,
                });
                out.dilemmas.push(Dilemma {
                    id,
                    episode_id: e.episode_id.clone(),
                    summary: e.summaries[s.summary_index].clone(),
                    body,
                    question,
                });
            }
            Err(err) => out.skipped.push(SkipRecord {
                episode_id: e.episode_id.clone(),
                summary_index: Some(s.summary_index),
                reason: err.to_string(),
            }),
        }
    }
    out
}
