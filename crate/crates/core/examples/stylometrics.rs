//! Stylometric features of a few responses.
//!
//!     cargo run --example stylometrics

use chrono::DateTime;
use normalign::lexicon::{Language, StyleLexicons};
use normalign::metrics::{mean_style, stylometrics};
use normalign::model::AgentResponse;

fn main() {
    let lex = StyleLexicons::bundled(Language::Danish);
    let texts = [
        "Du bør måske tale med Finn. Kan du forklare ham, hvordan du har det?",
        "Ring til boligforeningen. Det koster 200 kroner at klage, og det tager 2,5 uge.",
    ];
    let stats: Vec<_> = texts
        .iter()
        .map(|t| {
            let r = AgentResponse {
                agent_id: "model".into(),
                dilemma_id: "d".into(),
                text: t.to_string(),
                created_at: DateTime::UNIX_EPOCH,
            };
            stylometrics(&r, &lex, None)
        })
        .collect();
    for s in &stats {
        println!("{}", serde_json::to_string(s).unwrap());
    }
    println!("mean: {}", serde_json::to_string(&mean_style(&stats)).unwrap());
}
