//! Word lists shipped with the crate: negation constructions, stylometric
//! features, award-section keywords and abbreviations.
//!
//! Every list is a plain line-delimited file; `#` starts a comment line.
//! Bundled copies can be replaced or extended from disk.

use std::collections::BTreeSet;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Language {
    Danish,
    English,
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "da" | "danish" => Ok(Language::Danish),
            "en" | "english" => Ok(Language::English),
            other => Err(format!("unsupported language {other:?}")),
        }
    }
}

macro_rules! bundled {
    ($lang:expr, $file:literal) => {
        match $lang {
            Language::Danish => include_str!(concat!("../lexicons/da/", $file)),
            Language::English => include_str!(concat!("../lexicons/en/", $file)),
        }
    };
}

pub(crate) fn entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Case-insensitive set of entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordList(BTreeSet<String>);

impl WordList {
    pub fn parse(text: &str) -> Self {
        WordList(entries(text).map(str::to_lowercase).collect())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(WordList::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn extend(&mut self, other: WordList) {
        self.0.extend(other.0);
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl<S: AsRef<str>> FromIterator<S> for WordList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        WordList(iter.into_iter().map(|s| s.as_ref().to_lowercase()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternToken {
    /// Matched case-insensitively and dropped.
    Literal(String),
    /// Exactly one word, kept.
    Word,
    /// The non-empty remainder, kept. Always last.
    Rest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegationPattern {
    pub source: String,
    pub tokens: Vec<PatternToken>,
}

impl NegationPattern {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut tokens = Vec::new();
        let words: Vec<&str> = line.split_whitespace().collect();
        for (i, w) in words.iter().enumerate() {
            tokens.push(match *w {
                "{w}" => PatternToken::Word,
                "{rest}" if i + 1 == words.len() => PatternToken::Rest,
                "{rest}" => return Err(format!("{{rest}} must be last in {line:?}")),
                lit => PatternToken::Literal(normalize_apostrophes(&lit.to_lowercase())),
            });
        }
        if !tokens.iter().any(|t| matches!(t, PatternToken::Literal(_))) {
            return Err(format!("pattern {line:?} has no negation word"));
        }
        if tokens.last() != Some(&PatternToken::Rest) {
            return Err(format!("pattern {line:?} must end with {{rest}}"));
        }
        Ok(NegationPattern { source: line.to_string(), tokens })
    }

    /// If `text` starts with this construction, returns the text with the
    /// negation words removed.
    pub fn strip(&self, text: &str) -> Option<String> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut kept: Vec<&str> = Vec::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            match tok {
                PatternToken::Literal(lit) => {
                    let w = words.get(i)?;
                    if normalize_apostrophes(&w.to_lowercase()) != *lit {
                        return None;
                    }
                }
                PatternToken::Word => kept.push(words.get(i)?),
                PatternToken::Rest => {
                    if words.len() <= i {
                        return None;
                    }
                    kept.extend_from_slice(&words[i..]);
                }
            }
        }
        Some(kept.join(" "))
    }
}

fn normalize_apostrophes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'")
}

/// Negated-imperative constructions for one or more languages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegationLexicon {
    pub patterns: Vec<NegationPattern>,
}

impl NegationLexicon {
    pub fn parse(text: &str) -> Result<Self, String> {
        Ok(NegationLexicon {
            patterns: entries(text).map(NegationPattern::parse).collect::<Result<_, _>>()?,
        })
    }

    pub fn bundled(lang: Language) -> Self {
        NegationLexicon::parse(bundled!(lang, "negation.txt")).expect("bundled negation lexicon parses")
    }

    /// Danish and English together.
    pub fn bundled_all() -> Self {
        let mut l = NegationLexicon::bundled(Language::Danish);
        l.extend(NegationLexicon::bundled(Language::English));
        l
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        NegationLexicon::parse(&text)
    }

    pub fn extend(&mut self, other: NegationLexicon) {
        for p in other.patterns {
            if !self.patterns.contains(&p) {
                self.patterns.push(p);
            }
        }
    }

    /// First pattern (in file order) that matches the start of `text`.
    pub fn strip_once(&self, text: &str) -> Option<String> {
        self.patterns.iter().find_map(|p| p.strip(text))
    }

    pub fn matches(&self, text: &str) -> bool {
        self.strip_once(text).is_some()
    }
}

/// Lexicons used by the stylometric features.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StyleLexicons {
    pub modal_verbs: WordList,
    pub hedges: WordList,
    pub you_pronouns: WordList,
}

impl StyleLexicons {
    pub fn bundled(lang: Language) -> Self {
        StyleLexicons {
            modal_verbs: WordList::parse(bundled!(lang, "modal_verbs.txt")),
            hedges: WordList::parse(bundled!(lang, "hedges.txt")),
            you_pronouns: WordList::parse(bundled!(lang, "you_pronouns.txt")),
        }
    }

    /// Loads `modal_verbs.txt`, `hedges.txt` and `you_pronouns.txt` from a directory.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(StyleLexicons {
            modal_verbs: WordList::load(&dir.join("modal_verbs.txt"))?,
            hedges: WordList::load(&dir.join("hedges.txt"))?,
            you_pronouns: WordList::load(&dir.join("you_pronouns.txt"))?,
        })
    }
}

pub fn award_keywords(lang: Language) -> WordList {
    WordList::parse(bundled!(lang, "award.txt"))
}

pub fn abbreviations(lang: Language) -> WordList {
    WordList::parse(bundled!(lang, "abbreviations.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lists_load() {
        for lang in [Language::Danish, Language::English] {
            assert!(!NegationLexicon::bundled(lang).patterns.is_empty());
            assert!(!award_keywords(lang).is_empty());
            assert!(!abbreviations(lang).is_empty());
            let s = StyleLexicons::bundled(lang);
            assert!(!s.modal_verbs.is_empty() && !s.hedges.is_empty() && !s.you_pronouns.is_empty());
        }
        assert!(award_keywords(Language::Danish).contains("T-shirt"));
    }

    #[test]
    fn pattern_syntax() {
        assert!(NegationPattern::parse("{rest} not").is_err());
        assert!(NegationPattern::parse("{w} {rest}").is_err());
        assert!(NegationPattern::parse("do not").is_err());
        let p = NegationPattern::parse("{w} ikke {rest}").unwrap();
        assert_eq!(p.strip("Køb ikke dette æble").as_deref(), Some("Køb dette æble"));
        assert_eq!(p.strip("Køb ikke"), None);
        assert_eq!(p.strip("Det er ikke godt"), None);
    }

    #[test]
    fn curly_apostrophes_match() {
        let l = NegationLexicon::bundled(Language::English);
        assert_eq!(l.strip_once("Don\u{2019}t call her").as_deref(), Some("call her"));
    }
}
