//! Surface features of a response, normalized by word count.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexicon::StyleLexicons;
use crate::model::AgentResponse;
use crate::rational::Rational;

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:[.,]\d+)*|[\p{L}\p{N}]+").unwrap())
}

fn numeral_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+(?:[.,]\d+)*$").unwrap())
}

/// Alphanumeric runs; a number with internal `.`/`,` separators stays one token.
pub fn tokenize(text: &str) -> Vec<&str> {
    token_re().find_iter(text).map(|m| m.as_str()).collect()
}

/// External named-entity hook for counting person mentions.
pub trait PersonTagger {
    fn count_person_mentions(&self, text: &str, tokens: &[&str]) -> usize;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleStats {
    pub word_count: usize,
    pub numerals: Option<Rational>,
    pub question_marks: Option<Rational>,
    pub modal_verbs: Option<Rational>,
    pub hedges: Option<Rational>,
    pub you_pronouns: Option<Rational>,
    /// Null unless a tagger was supplied.
    pub person_mentions: Option<Rational>,
}

pub fn stylometrics(
    response: &AgentResponse,
    lexicons: &StyleLexicons,
    tagger: Option<&dyn PersonTagger>,
) -> StyleStats {
    let text = &response.text;
    let tokens = tokenize(text);
    let n = tokens.len();
    let count = |pred: &dyn Fn(&str) -> bool| Rational::ratio(tokens.iter().filter(|t| pred(t)).count(), n);
    StyleStats {
        word_count: n,
        numerals: count(&|t| numeral_re().is_match(t)),
        question_marks: Rational::ratio(text.matches('?').count(), n),
        modal_verbs: count(&|t| lexicons.modal_verbs.contains(t)),
        hedges: count(&|t| lexicons.hedges.contains(t)),
        you_pronouns: count(&|t| lexicons.you_pronouns.contains(t)),
        person_mentions: tagger.and_then(|tg| Rational::ratio(tg.count_person_mentions(text, &tokens), n)),
    }
}

/// Per-feature means over responses, each feature averaged over the
/// responses where it is defined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleMeans {
    pub n_responses: usize,
    pub numerals: Option<Rational>,
    pub question_marks: Option<Rational>,
    pub modal_verbs: Option<Rational>,
    pub hedges: Option<Rational>,
    pub you_pronouns: Option<Rational>,
    pub person_mentions: Option<Rational>,
}

pub fn mean_style(stats: &[StyleStats]) -> StyleMeans {
    let mean = |f: fn(&StyleStats) -> Option<&Rational>| Rational::mean(stats.iter().filter_map(f));
    StyleMeans {
        n_responses: stats.len(),
        numerals: mean(|s| s.numerals.as_ref()),
        question_marks: mean(|s| s.question_marks.as_ref()),
        modal_verbs: mean(|s| s.modal_verbs.as_ref()),
        hedges: mean(|s| s.hedges.as_ref()),
        you_pronouns: mean(|s| s.you_pronouns.as_ref()),
        person_mentions: mean(|s| s.person_mentions.as_ref()),
    }
}
