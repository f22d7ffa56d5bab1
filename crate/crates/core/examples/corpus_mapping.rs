//! Segments a transcript, finds the prize section, maps a dilemma summary to
//! the chunk where it is introduced, and cuts the section out.
//!
//!     cargo run --example corpus_mapping

use std::sync::Arc;

use normalign::client::{ChatClient, EmbedClient, HashEmbedder, ScriptEntry, ScriptedChat};
use normalign::corpus::{chunk, detect_award_section, render_section, split_into_sections, transcript_sentences, SectionLocator};
use normalign::lexicon::{abbreviations, award_keywords, Language};
use normalign::model::Transcript;
use normalign::template::TemplateSet;

fn main() {
    let line = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/toy/transcripts.jsonl")).unwrap();
    let t: Transcript = serde_json::from_str(line.lines().next().unwrap()).unwrap();

    let sentences = transcript_sentences(&t, &abbreviations(Language::Danish));
    let award = detect_award_section(&sentences, &award_keywords(Language::Danish));
    println!("{} sentences, award section {award:?}", sentences.len());
    let chunks = chunk(&sentences, 3, 1).unwrap();

    let verifier = ScriptedChat::new(
        "mock:verify",
        vec![
            ScriptEntry::containing(&["Excerpt:\nDagens første dilemma"], r#"{"introduced": true}"#),
            ScriptEntry::containing(&["Excerpt:\nNæste dilemma"], r#"{"introduced": true}"#),
            ScriptEntry::fallback(r#"{"introduced": false}"#),
        ],
    );
    let locator = SectionLocator::new(
        EmbedClient::new(Arc::new(HashEmbedder::new(256))),
        ChatClient::new(Arc::new(verifier)),
        TemplateSet::bundled().verify,
    );
    let embeddings = locator.embed_chunks(&chunks).unwrap();
    let mut starts = Vec::new();
    for (k, summary) in t.summaries.iter().enumerate() {
        let located = locator.map_summary_to_section(summary, &chunks, &embeddings, award).unwrap();
        println!("summary {k}: {:?} via {:?}", located.chunk_index, located.path);
        if let Some(i) = located.chunk_index {
            starts.push((k, chunks[i].span.start));
        }
    }
    let (sections, _) = split_into_sections(&starts, sentences.len(), award);
    for s in sections {
        println!("\n-- section for summary {} ({:?})\n{}", s.summary_index, s.span, render_section(&sentences[s.span.start..s.span.end]));
    }
}
