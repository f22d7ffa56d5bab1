//! Scores a hand-built match matrix, aggregates two dilemmas, and prints a
//! classification report with kappa.
//!
//!     cargo run --example metrics

use normalign::metrics::{aggregate, classification_report, cohen_kappa, partition_matches, score, AggregateMode};
use normalign::model::{CmrVerdict, MatchJudgment, MatchMatrix, Solution, Stance};

fn sol(id: &str, text: &str, stance: Stance) -> Solution {
    Solution {
        id: id.into(),
        dilemma_id: "d1".into(),
        agent_id: id.split(':').next().unwrap().into(),
        text: text.into(),
        stance,
        negation_flipped: false,
        source_response_id: String::new(),
    }
}

fn main() {
    let cand = [
        sol("model:a0", "Talk to Finn about how you feel", Stance::Advised),
        sol("model:a1", "Forbid Finn from seeing Pia", Stance::Advised),
        sol("model:a2", "Buy flowers", Stance::Advised),
    ];
    let refs = [
        sol("panel:a0", "Talk to Finn", Stance::Advised),
        sol("panel:n0", "Forbid Finn from seeing Pia", Stance::NotAdvised),
    ];
    let matched = |c: &str, r: &str| matches!((c, r), ("model:a0", "panel:a0") | ("model:a1", "panel:n0"));
    let mut m = MatchMatrix::new("d1", cand.iter().map(|s| s.id.clone()).collect(), refs.iter().map(|s| s.id.clone()).collect());
    for c in &cand {
        for r in &refs {
            m.insert(MatchJudgment::new(c, r, CmrVerdict::all(matched(&c.id, &r.id), ""))).unwrap();
        }
    }

    let p = partition_matches(&m).unwrap();
    println!("agree: {:?}\nconflict: {:?}", p.agree, p.conflict);
    let s = score(&m).unwrap();
    println!("saa={} eaa={} avg={}", s.saa().unwrap(), s.eaa().unwrap(), s.avg().unwrap());
    println!("saa={} (rendered)", s.saa().unwrap().to_decimal_string(3));

    let other = normalign::model::AlignmentScores::from_counts(3, 0, 4, 5);
    for mode in [AggregateMode::Macro, AggregateMode::Micro] {
        let a = aggregate(&[s.clone(), other.clone()], mode).unwrap();
        println!("{mode:?}: saa={:?} eaa={:?}", a.saa.map(|r| r.to_string()), a.eaa.map(|r| r.to_string()));
    }

    let gold: Vec<&str> = [("M", 240), ("NM", 60)].iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect();
    let pred: Vec<&str> =
        [("M", 232), ("NM", 8), ("M", 2), ("NM", 58)].iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect();
    println!("\n{}", classification_report(&gold, &pred).unwrap().render(2));
    let k = cohen_kappa(&gold, &pred).unwrap().unwrap();
    println!("kappa = {}", k.to_decimal_string(3));
}
