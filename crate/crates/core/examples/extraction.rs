//! Extracts stance-tagged solutions from a response and cleans them up.
//!
//!     cargo run --example extraction

use std::sync::Arc;

use chrono::DateTime;
use normalign::client::{ChatClient, ScriptEntry, ScriptedChat};
use normalign::extraction::{normalize_negation, Extractor, Postprocessor};
use normalign::lexicon::{Language, NegationLexicon};
use normalign::model::{AgentResponse, Dilemma, Stance};
use normalign::template::TemplateSet;

fn main() {
    let lexicon = NegationLexicon::bundled(Language::Danish);
    for text in ["Lad være med at ringe til Pia", "Køb ikke blomster", "Det er ikke din skyld"] {
        let n = normalize_negation(text, Stance::Advised, &lexicon);
        println!("{text:?} -> {:?} ({}, flipped={})", n.text, n.stance, n.flipped);
    }

    let dilemma = Dilemma {
        id: "e01-d1".into(),
        episode_id: "e01".into(),
        summary: String::new(),
        body: "Min kæreste Finn skriver hver dag med sin eks Pia.".into(),
        question: "Hvad skal jeg gøre?".into(),
    };
    let response = AgentResponse {
        agent_id: "model".into(),
        dilemma_id: dilemma.id.clone(),
        text: "Fortæl Finn, hvordan du har det. Du skal ikke forbyde ham at se Pia. Fortæl ham, hvordan du har det!".into(),
        created_at: DateTime::UNIX_EPOCH,
    };

    let templates = TemplateSet::bundled();
    let extract = ScriptedChat::new(
        "mock:extract",
        vec![ScriptEntry::fallback(
            r#"{"advised": ["Fortæl Finn, hvordan du har det", "Du skal ikke forbyde Finn at se Pia", "Fortæl Finn hvordan du har det"], "not_advised": []}"#,
        )],
    );
    let extractor = Extractor::new(ChatClient::new(Arc::new(extract)), templates.extraction, NegationLexicon::bundled_all());
    let raw = extractor.extract(&dilemma, &response).unwrap().into_vec();
    println!("\nextracted:");
    for s in &raw {
        println!("  {} [{}] {}", s.id, s.stance, s.text);
    }

    let judge = ScriptedChat::new(
        "mock:postprocess",
        vec![ScriptEntry::fallback(r#"{"duplicates": [{"index": 1, "duplicate_of": 0}], "remove": [], "stance_fixes": []}"#)],
    );
    let post = Postprocessor::new(ChatClient::new(Arc::new(judge)), templates.postprocess, NegationLexicon::bundled_all());
    let (clean, log) = post.postprocess_logged(raw, &dilemma).unwrap();
    println!("\nafter clean-up (merged {:?}):", log.merged);
    for s in &clean {
        println!("  {} [{}] {}", s.id, s.stance, s.text);
    }
}
