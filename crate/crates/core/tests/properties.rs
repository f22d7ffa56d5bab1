mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use common::{solution, stance, toy_dilemma, MatrixSpec};
use normalign::annotation::{
    agreement_stats, sample_match_tasks, AnnotationStore, AnnotationTask, CorpusIndex, LabelSubmission, TaskPayload,
    Taxonomy,
};
use normalign::batch::run_bounded;
use normalign::client::{
    ChatBackend, ChatClient, ChatRequest, DiskCache, EmbedClient, HashEmbedder, RawCompletion, ScriptEntry,
    ScriptedChat, TransportError, Usage,
};
use normalign::corpus::{
    award_window_start, chunk, detect_award_section, split_into_sections, SectionLocator, Sentence, Span,
};
use normalign::extraction::{normalize_negation, Postprocessor};
use normalign::lexicon::{award_keywords, Language, NegationLexicon};
use normalign::matching::{match_all, PairJudge, TextEqualityJudge};
use normalign::metrics::{aggregate, partition_matches, score, AggregateMode};
use normalign::model::{AlignmentScores, MatchRecord, Solution, TargetKind};
use normalign::rational::Rational;
use normalign::template::TemplateSet;
use proptest::prelude::*;
use regex::Regex;

fn matrix_spec(max: usize) -> impl Strategy<Value = MatrixSpec> {
    (1..=max, 1..=max).prop_flat_map(|(nc, nr)| {
        (
            prop::collection::vec(any::<bool>().prop_map(stance), nc),
            prop::collection::vec(any::<bool>().prop_map(stance), nr),
            prop::collection::vec(prop::bool::weighted(0.3), nc * nr),
        )
            .prop_map(|(cand, refs, bits)| MatrixSpec { cand, refs, bits })
    })
}

fn sentences(n: usize) -> Vec<Sentence> {
    (0..n).map(|i| Sentence { speaker: "V".into(), text: format!("Sætning nummer {i} om noget.") }).collect()
}

const WORDS: [&str; 8] = ["ring", "til", "Pia", "tal", "med", "Finn", "køb", "blomster"];
const PREFIXES: [&str; 7] = ["", "", "Lad være med at ", "Du skal ikke ", "Don't ", "Never ", "Do not "];

fn advice_text() -> impl Strategy<Value = String> {
    (
        prop::sample::select(PREFIXES.to_vec()),
        prop::sample::select(PREFIXES.to_vec()),
        prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..4),
        any::<bool>(),
    )
        .prop_map(|(p1, p2, words, joke)| {
            let mut s = format!("{p1}{p2}{}", words.join(" "));
            if joke {
                s.push_str(" haha");
            }
            s
        })
}

// ---- model ----

proptest! {
    #[test]
    fn scores_follow_their_counts(a in 0usize..20, c in 0usize..20, nc in 0usize..20, nr in 0usize..20) {
        let s = AlignmentScores::from_counts(a, c, nc, nr);
        prop_assert_eq!(s.saa().cloned(), Rational::ratio(a, nc + nr));
        prop_assert_eq!(s.eaa().is_some(), a + c > 0);
        if let Some(e) = s.eaa() {
            prop_assert!(!e.is_negative() && *e <= Rational::one());
        }
        match (s.saa(), s.eaa()) {
            (Some(x), Some(y)) => prop_assert_eq!(s.avg().cloned(), Some(&(x + y) / &Rational::from_integer(2))),
            _ => prop_assert!(s.avg().is_none()),
        }
        let back: AlignmentScores = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn records_round_trip(spec in matrix_spec(4)) {
        for j in spec.matrix().judgments() {
            let r = MatchRecord::from_judgment("d", j);
            let line = serde_json::to_string(&r).unwrap();
            let back: MatchRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(&back.into_judgment().unwrap(), j);
        }
        let (c, _) = spec.solutions();
        for s in c {
            let back: Solution = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}

// ---- client and batch ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_hits_are_byte_identical(key in "[a-f0-9]{8,16}", value in "\\PC{0,200}") {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        cache.put(&key, &value);
        prop_assert_eq!(cache.get::<String>(&key), Some(value));
    }

    #[test]
    fn bounded_runs_keep_positions(items in prop::collection::vec(any::<u32>(), 0..50), p in 1usize..9) {
        let seq: Vec<u64> = items.iter().map(|&x| u64::from(x) * 3 + 1).collect();
        prop_assert_eq!(run_bounded(&items, p, |&x| u64::from(x) * 3 + 1), seq);
    }
}

// ---- extraction ----

/// Deterministic content-based judge: flags case-insensitive repeats as
/// duplicates and anything containing "haha" as a joke.
struct ContentJudge;

impl ChatBackend for ContentJudge {
    fn model_ref(&self) -> &str {
        "test:content-judge"
    }

    fn send(&self, request: &ChatRequest) -> Result<RawCompletion, TransportError> {
        let line = Regex::new(r"(?m)^\[(\d+)\] \((?:advised|not_advised)\) (.*)$").unwrap();
        let items: Vec<(usize, String)> = line
            .captures_iter(&request.user_prompt)
            .map(|c| (c[1].parse().unwrap(), c[2].to_lowercase()))
            .collect();
        let mut duplicates = Vec::new();
        let mut remove = Vec::new();
        for (k, (i, text)) in items.iter().enumerate() {
            if let Some((j, _)) = items[..k].iter().find(|(_, t)| t == text) {
                duplicates.push(serde_json::json!({"index": i, "duplicate_of": j}));
            } else if text.contains("haha") {
                remove.push(serde_json::json!({"index": i, "reason": "joke"}));
            }
        }
        let text = serde_json::json!({"duplicates": duplicates, "remove": remove, "stance_fixes": []}).to_string();
        Ok(RawCompletion { text, usage: Usage::default() })
    }
}

fn postprocessor() -> Postprocessor {
    Postprocessor::new(
        ChatClient::new(Arc::new(ContentJudge)),
        TemplateSet::bundled().postprocess,
        NegationLexicon::bundled_all(),
    )
}

proptest! {
    #[test]
    fn negation_normalization_is_idempotent(text in advice_text(), advised in any::<bool>()) {
        let lex = NegationLexicon::bundled_all();
        let once = normalize_negation(&text, stance(advised), &lex);
        let twice = normalize_negation(&once.text, once.stance, &lex);
        prop_assert_eq!(&twice.text, &once.text);
        prop_assert_eq!(twice.stance, once.stance);
        prop_assert!(!twice.flipped);
        prop_assert!(!lex.matches(&once.text));
    }

    #[test]
    fn postprocess_conserves_normalizes_and_is_idempotent(
        items in prop::collection::vec((advice_text(), any::<bool>()), 0..8)
    ) {
        let input: Vec<Solution> = items
            .iter()
            .enumerate()
            .map(|(i, (t, a))| solution("d", "m", i, t, stance(*a)))
            .collect();
        let ids: BTreeSet<String> = input.iter().map(|s| s.id.clone()).collect();
        let pp = postprocessor();
        let d = toy_dilemma("d");
        let once = pp.postprocess(input, &d).unwrap();
        for s in &once {
            prop_assert!(ids.contains(&s.id), "invented {}", s.id);
            prop_assert!(!pp.lexicon.matches(&s.text), "negated output {}", s.text);
        }
        let twice = pp.postprocess(once.clone(), &d).unwrap();
        prop_assert_eq!(twice, once);
    }
}

// ---- matching ----

type Texts = Vec<(String, bool)>;

fn texts_spec() -> impl Strategy<Value = (Texts, Texts)> {
    let item = (prop::sample::select(vec!["Ring til Pia", "ring til pia.", "Tal med Finn", "Køb blomster"]), any::<bool>())
        .prop_map(|(t, a)| (t.to_string(), a));
    (prop::collection::vec(item.clone(), 0..6), prop::collection::vec(item, 0..6))
}

fn build(side: &[(String, bool)], agent: &str) -> Vec<Solution> {
    side.iter().enumerate().map(|(i, (t, a))| solution("d", agent, i, t, stance(*a))).collect()
}

proptest! {
    #[test]
    fn full_matrices_are_complete((c, r) in texts_spec(), p in 1usize..5) {
        let m = match_all(&build(&c, "m"), &build(&r, "panel"), &toy_dilemma("d"), &TextEqualityJudge, p);
        prop_assert!(!m.is_partial());
        prop_assert_eq!(m.len(), c.len() * r.len());
    }

    #[test]
    fn text_judge_is_symmetric((c, r) in texts_spec()) {
        let d = toy_dilemma("d");
        for a in build(&c, "m") {
            for b in build(&r, "panel") {
                let ab = TextEqualityJudge.judge(&a, &b, &d).unwrap().no_rule_violated();
                let ba = TextEqualityJudge.judge(&b, &a, &d).unwrap().no_rule_violated();
                prop_assert_eq!(ab, ba);
            }
        }
    }

    #[test]
    fn stances_never_change_match_bits((c, r) in texts_spec(), flips in prop::collection::vec(any::<bool>(), 12)) {
        let d = toy_dilemma("d");
        let (cs, rs) = (build(&c, "m"), build(&r, "panel"));
        let mut cs2 = cs.clone();
        for (s, f) in cs2.iter_mut().zip(&flips) {
            if *f {
                s.stance = s.stance.flip();
            }
        }
        let a = match_all(&cs, &rs, &d, &TextEqualityJudge, 1);
        let b = match_all(&cs2, &rs, &d, &TextEqualityJudge, 1);
        for (x, y) in a.judgments().zip(b.judgments()) {
            prop_assert_eq!(x.matched, y.matched);
        }
        for (s, j) in cs2.iter().flat_map(|s| rs.iter().map(move |r| (s, r))).zip(b.judgments()) {
            prop_assert_eq!(j.stance_agree, s.0.stance == s.1.stance);
        }
    }
}

// ---- metrics ----

proptest! {
    #[test]
    fn partition_counts_every_matched_pair(spec in matrix_spec(8)) {
        let m = spec.matrix();
        let p = partition_matches(&m).unwrap();
        prop_assert_eq!(p.agree.len() + p.conflict.len(), m.judgments().filter(|j| j.matched).count());
        prop_assert!(p.agree.is_disjoint(&p.conflict));
    }

    #[test]
    fn unmatched_padding_keeps_eaa(spec in matrix_spec(6), k in 1usize..20, seed in any::<u64>()) {
        let base = score(&spec.matrix()).unwrap();
        let padded = score(&spec.padded(k, |i| stance((seed >> (i % 64)) & 1 == 1)).matrix()).unwrap();
        prop_assert_eq!(base.eaa(), padded.eaa());
        if base.n_agree() > 0 {
            prop_assert!(padded.saa().unwrap() < base.saa().unwrap());
        }
    }

    #[test]
    fn flipping_candidate_stances_swaps_agree_and_conflict(spec in matrix_spec(8)) {
        let base = score(&spec.matrix()).unwrap();
        let flipped = score(&spec.flipped().matrix()).unwrap();
        prop_assert_eq!(flipped.n_agree(), base.n_conflict());
        prop_assert_eq!(flipped.eaa().cloned(), Rational::ratio(base.n_conflict(), base.n_agree() + base.n_conflict()));
    }

    #[test]
    fn macro_equals_micro_on_identical_counts(a in 0usize..10, c in 0usize..10, nc in 1usize..10, nr in 1usize..10, n in 1usize..6) {
        let per = vec![AlignmentScores::from_counts(a, c, nc, nr); n];
        let ma = aggregate(&per, AggregateMode::Macro).unwrap();
        let mi = aggregate(&per, AggregateMode::Micro).unwrap();
        prop_assert_eq!((&ma.saa, &ma.eaa, &ma.avg), (&mi.saa, &mi.eaa, &mi.avg));
    }

    #[test]
    fn metric_functions_are_pure(specs in prop::collection::vec(matrix_spec(5), 1..5)) {
        let scores: Vec<AlignmentScores> = specs.iter().map(|s| score(&s.matrix()).unwrap()).collect();
        let again: Vec<AlignmentScores> = specs.iter().map(|s| score(&s.matrix()).unwrap()).collect();
        prop_assert_eq!(&scores, &again);
        for mode in [AggregateMode::Macro, AggregateMode::Micro] {
            let x = serde_json::to_string(&aggregate(&scores, mode).unwrap()).unwrap();
            let y = serde_json::to_string(&aggregate(&again, mode).unwrap()).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}

// ---- corpus ----

proptest! {
    #[test]
    fn chunks_cover_every_sentence(n in 0usize..60, size in 1usize..8, stride_seed in any::<usize>()) {
        let stride = 1 + stride_seed % size;
        let chunks = chunk(&sentences(n), size, stride).unwrap();
        let mut covered = vec![false; n];
        for (k, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.index, k);
            prop_assert_eq!(c.span.start, k * stride);
            prop_assert!(c.span.len() <= size && !c.span.is_empty());
            covered[c.span.start..c.span.end].iter_mut().for_each(|x| *x = true);
        }
        prop_assert!(covered.iter().all(|&x| x));
        if n > 0 {
            prop_assert_eq!(chunks.last().unwrap().span.end, n);
            prop_assert_eq!(chunks.len(), if n <= size { 1 } else { (n - size).div_ceil(stride) + 1 });
        } else {
            prop_assert!(chunks.is_empty());
        }
    }

    #[test]
    fn award_keywords_before_the_window_never_match(n in 1usize..80, pos_seed in any::<usize>(), late in any::<bool>()) {
        let mut s = sentences(n);
        let start = award_window_start(n);
        let pos = if late && start < n { start + pos_seed % (n - start) } else { pos_seed % start.max(1) };
        s[pos].text = "Ugens T-shirt går til Pia.".into();
        let found = detect_award_section(&s, &award_keywords(Language::Danish));
        if pos >= start {
            prop_assert_eq!(found, Some(Span::new(pos, n)));
        } else {
            prop_assert_eq!(found, None);
        }
    }

    #[test]
    fn sections_are_disjoint_and_ordered(
        n in 1usize..80,
        starts in prop::collection::vec(any::<usize>(), 0..8),
        award_at in prop::option::of(any::<usize>()),
    ) {
        let award = award_at.map(|a| Span::new(a % n, n));
        let limit = award.map_or(n, |a| a.start);
        let located: Vec<(usize, usize)> = starts.iter().enumerate().map(|(k, s)| (k, s % limit.max(1))).collect();
        let (sections, violations) = split_into_sections(&located, n, award);
        prop_assert_eq!(sections.len() + violations.len(), located.len());
        for w in sections.windows(2) {
            prop_assert!(w[0].span.end <= w[1].span.start);
            prop_assert!(w[0].span.start < w[1].span.start);
        }
        for s in &sections {
            prop_assert!(s.span.end <= limit.max(s.span.start));
            if let Some(a) = award {
                prop_assert!(!s.span.intersects(&a));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn located_chunks_avoid_the_award_section(n in 4usize..40, award_seed in any::<usize>(), positive in prop::collection::vec(any::<bool>(), 40)) {
        let s = sentences(n);
        let chunks = chunk(&s, 3, 1).unwrap();
        let award = Span::new(award_window_start(n) + award_seed % (n - award_window_start(n)).max(1), n);
        let marked: Vec<ScriptEntry> = chunks
            .iter()
            .filter(|c| positive[c.index % positive.len()])
            .map(|c| ScriptEntry::containing(&[&format!("Excerpt:\n{}\n", c.text)], r#"{"introduced": true}"#))
            .chain([ScriptEntry::fallback(r#"{"introduced": false}"#)])
            .collect();
        let locator = SectionLocator::new(
            EmbedClient::new(Arc::new(HashEmbedder::new(64))),
            ChatClient::new(Arc::new(ScriptedChat::new("mock:v", marked))),
            TemplateSet::bundled().verify,
        );
        let embeddings = locator.embed_chunks(&chunks).unwrap();
        let located = locator.map_summary_to_section("Sætning om noget", &chunks, &embeddings, Some(award)).unwrap();
        if let Some(i) = located.chunk_index {
            prop_assert!(!chunks[i].span.intersects(&award));
        }
        for t in &located.top_similarities {
            prop_assert!(!chunks[t.chunk_index].span.intersects(&award));
        }
    }
}

// ---- annotation ----

fn at(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000 + secs, 0).unwrap()
}

fn mapping_tasks(n: usize) -> Vec<AnnotationTask> {
    (0..n)
        .map(|i| AnnotationTask {
            task_id: format!("t{i}"),
            kind: TargetKind::DilemmaMapping,
            target_ref: format!("e:{i}"),
            payload: TaskPayload::DilemmaMapping {
                episode_id: "e".into(),
                summary: "s".into(),
                chunk_index: i,
                chunk_text: "c".into(),
            },
            label_schema: Taxonomy::bundled().dilemma_mapping.clone(),
            pipeline_label: Some(if i % 2 == 0 { "introduced" } else { "not_introduced" }.into()),
            assigned_to: None,
            redundancy: 2,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_tasks_point_at_real_judgments(specs in prop::collection::vec(matrix_spec(6), 1..4), per_cell in 1usize..5, seed in any::<u64>()) {
        let mut matrices = Vec::new();
        let mut dilemmas = Vec::new();
        let mut solutions = Vec::new();
        for (k, spec) in specs.iter().enumerate() {
            let id = format!("d{k}");
            let c: Vec<Solution> = spec.cand.iter().enumerate().map(|(i, &s)| solution(&id, "m", i, "c", s)).collect();
            let r: Vec<Solution> = spec.refs.iter().enumerate().map(|(i, &s)| solution(&id, "panel", i, "r", s)).collect();
            let mut m = normalign::model::MatchMatrix::new(id.clone(), c.iter().map(|s| s.id.clone()).collect(), r.iter().map(|s| s.id.clone()).collect());
            for (i, cs) in c.iter().enumerate() {
                for (j, rs) in r.iter().enumerate() {
                    let v = normalign::model::CmrVerdict::all(spec.bits[i * r.len() + j], "");
                    m.insert(normalign::model::MatchJudgment::new(cs, rs, v)).unwrap();
                }
            }
            matrices.push(m);
            dilemmas.push(toy_dilemma(&id));
            solutions.extend(c);
            solutions.extend(r);
        }
        let index = CorpusIndex::new(&dilemmas, &solutions);
        let tasks = sample_match_tasks(&matrices, &index, &Taxonomy::bundled(), per_cell, seed);
        let ids: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        prop_assert_eq!(ids.len(), tasks.len());
        for t in &tasks {
            let TaskPayload::MatchPair { dilemma, candidate, reference, pipeline_matched, .. } = &t.payload else {
                panic!("not a match task");
            };
            let m = matrices.iter().find(|m| m.dilemma_id == dilemma.id).unwrap();
            let j = m.get(&candidate.id, &reference.id).expect("sampled pair exists");
            prop_assert_eq!(j.matched, *pipeline_matched);
        }
    }

    #[test]
    fn the_label_log_only_grows(subs in prop::collection::vec((0usize..6, 0usize..3, 0usize..3), 1..25)) {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("labels.jsonl");
        let store = AnnotationStore::open(mapping_tasks(4), &log).unwrap();
        let labels = ["introduced", "not_introduced", "maybe"];
        let mut accepted = 0;
        let mut previous = Vec::new();
        for (k, (task, ann, label)) in subs.iter().enumerate() {
            let sub = LabelSubmission {
                task_id: format!("t{task}"),
                annotator_id: format!("a{ann}"),
                label: labels[*label].into(),
                issues: vec![],
            };
            if store.record_label(sub, at(k as i64)).is_ok() {
                accepted += 1;
            }
            let now = std::fs::read(&log).unwrap_or_default();
            prop_assert!(now.starts_with(&previous));
            previous = now;
        }
        prop_assert_eq!(store.records().len(), accepted);
        let reopened = AnnotationStore::open(mapping_tasks(4), &log).unwrap();
        prop_assert_eq!(reopened.records(), store.records());
        if accepted > 0 {
            let a = serde_json::to_string(&agreement_stats(TargetKind::DilemmaMapping, &store.records(), store.tasks()).unwrap()).unwrap();
            let b = serde_json::to_string(&agreement_stats(TargetKind::DilemmaMapping, &reopened.records(), reopened.tasks()).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn hash_embedder_is_deterministic() {
    let e = HashEmbedder::new(32);
    assert_eq!(e.vectorize("Tal med Finn"), e.vectorize("tal MED finn"));
}
