//! Prompt templates with `{name}` placeholders.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template} needs a value for {{{name}}}")]
    MissingVariable { template: String, name: String },
    #[error("template {0}: {1}")]
    Load(String, String),
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub text: String,
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Template { name: name.into(), text: text.into() }
    }

    /// First 16 hex digits of the SHA-256 of the template text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))[..16].to_string()
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = placeholder()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string())
            .collect();
        names.dedup();
        names
    }

    /// Substitutes every placeholder in one pass; values are inserted
    /// verbatim and never re-scanned.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for caps in placeholder().captures_iter(&self.text) {
            let m = caps.get(0).unwrap();
            let name = &caps[1];
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingVariable {
                    template: self.name.clone(),
                    name: name.to_string(),
                })?;
            out.push_str(&self.text[last..m.start()]);
            out.push_str(value);
            last = m.end();
        }
        out.push_str(&self.text[last..]);
        Ok(out)
    }
}

/// The prompts used by the pipeline stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    pub extraction: Template,
    pub postprocess: Template,
    pub matching: Template,
    pub verify: Template,
    pub dilemma: Template,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        TemplateSet {
            extraction: Template::new("extraction", include_str!("../templates/extraction.prompt")),
            postprocess: Template::new("postprocess", include_str!("../templates/postprocess.prompt")),
            matching: Template::new("matching", include_str!("../templates/matching.prompt")),
            verify: Template::new("verify", include_str!("../templates/verify.prompt")),
            dilemma: Template::new("dilemma", include_str!("../templates/dilemma.prompt")),
        }
    }

    /// Bundled templates, each replaced by `<dir>/<name>.prompt` when present.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::bundled();
        for t in set.all_mut() {
            let path = dir.join(format!("{}.prompt", t.name));
            if path.exists() {
                t.text = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Load(t.name.clone(), e.to_string()))?;
            }
        }
        Ok(set)
    }

    fn all_mut(&mut self) -> [&mut Template; 5] {
        [
            &mut self.extraction,
            &mut self.postprocess,
            &mut self.matching,
            &mut self.verify,
            &mut self.dilemma,
        ]
    }

    pub fn all(&self) -> [&Template; 5] {
        [&self.extraction, &self.postprocess, &self.matching, &self.verify, &self.dilemma]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let t = Template::new("t", "A {a} B {b} {\"json\": 1}");
        let out = t.render(&[("a", "{b}"), ("b", "x")]).unwrap();
        assert_eq!(out, "A {b} B x {\"json\": 1}");
    }

    #[test]
    fn missing_variable() {
        let t = Template::new("t", "{dilemma}");
        assert_eq!(
            t.render(&[]),
            Err(TemplateError::MissingVariable { template: "t".into(), name: "dilemma".into() })
        );
    }

    #[test]
    fn bundled_placeholders_are_pinned() {
        let set = TemplateSet::bundled();
        assert_eq!(set.extraction.placeholders(), ["dilemma", "response"]);
        assert_eq!(set.postprocess.placeholders(), ["dilemma", "solutions"]);
        assert_eq!(set.matching.placeholders(), ["dilemma", "solution_a", "solution_b"]);
        assert_eq!(set.verify.placeholders(), ["summary", "chunk"]);
        assert_eq!(set.dilemma.placeholders(), ["summary", "section"]);
    }

    #[test]
    fn overrides_replace_by_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("verify.prompt"), "custom {summary} {chunk}").unwrap();
        let set = TemplateSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.verify.text, "custom {summary} {chunk}");
        assert_eq!(set.matching, TemplateSet::bundled().matching);
        assert_ne!(set.verify.hash(), TemplateSet::bundled().verify.hash());
    }
}
