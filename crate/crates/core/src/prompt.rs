//! Tag-form prompts: an ordered list of short comma-free fragments.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator used when rendering a prompt for a backend.
pub const SEPARATOR: &str = ", ";

/// Where a fragment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Init,
    Candidate,
    UserEdit,
}

/// Content/style split used by the enhanced framework and by editing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Content,
    Style,
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aspect::Content => f.write_str("content"),
            Aspect::Style => f.write_str("style"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub text: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<Aspect>,
}

impl Fragment {
    /// Builds a fragment, trimming the text. Empty and comma-bearing text is rejected.
    pub fn new(text: &str, origin: Origin) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::InvalidPrompt("empty fragment".into()));
        }
        if text.contains(',') {
            return Err(Error::InvalidPrompt(format!("fragment contains a comma: {text:?}")));
        }
        Ok(Self {
            text: text.to_string(),
            origin,
            aspect: None,
        })
    }

    pub fn with_aspect(mut self, aspect: Option<Aspect>) -> Self {
        self.aspect = aspect;
        self
    }

    pub fn key(&self) -> String {
        dedupe_key(&self.text)
    }
}

/// Comparison key for fragment identity: lowercase with inner whitespace collapsed.
pub fn dedupe_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The reverse prompt. Fragments are unique under [`dedupe_key`] and never empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Fragment>", into = "Vec<Fragment>")]
pub struct TagPrompt {
    fragments: Vec<Fragment>,
}

impl TagPrompt {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a prompt from fragments, dropping later duplicates.
    pub fn from_fragments<I: IntoIterator<Item = Fragment>>(fragments: I) -> Self {
        let mut out = Self::default();
        for f in fragments {
            out.push(f);
        }
        out
    }

    /// Builds a prompt from raw texts with a shared origin. Fails on empty or comma-bearing texts.
    pub fn from_texts<S: AsRef<str>>(texts: &[S], origin: Origin) -> Result<Self> {
        let mut out = Self::default();
        for t in texts {
            out.push(Fragment::new(t.as_ref(), origin)?);
        }
        Ok(out)
    }

    /// Appends unless an equal fragment is already present. Returns whether it was added.
    pub fn push(&mut self, fragment: Fragment) -> bool {
        let key = fragment.key();
        if self.fragments.iter().any(|f| f.key() == key) {
            return false;
        }
        self.fragments.push(fragment);
        true
    }

    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    pub fn texts(&self) -> Vec<&str> {
        self.fragments.iter().map(|f| f.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        let key = dedupe_key(text);
        self.fragments.iter().any(|f| f.key() == key)
    }

    /// Same fragment texts in the same order, ignoring origin and aspect.
    pub fn same_texts(&self, other: &TagPrompt) -> bool {
        self.len() == other.len()
            && self
                .fragments
                .iter()
                .zip(&other.fragments)
                .all(|(a, b)| a.text == b.text)
    }

    pub fn render(&self) -> String {
        render(self)
    }
}

impl TryFrom<Vec<Fragment>> for TagPrompt {
    type Error = Error;

    fn try_from(fragments: Vec<Fragment>) -> Result<Self> {
        let mut out = Self::default();
        for f in fragments {
            let checked = Fragment::new(&f.text, f.origin)?.with_aspect(f.aspect);
            if !out.push(checked) {
                return Err(Error::InvalidPrompt(format!("duplicate fragment {:?}", f.text)));
            }
        }
        Ok(out)
    }
}

impl From<TagPrompt> for Vec<Fragment> {
    fn from(p: TagPrompt) -> Self {
        p.fragments
    }
}

impl fmt::Display for TagPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn render(prompt: &TagPrompt) -> String {
    prompt.texts().join(SEPARATOR)
}

/// Splits on commas, trims, drops empties and dedupes case-insensitively (first wins).
pub fn parse_tags(text: &str) -> TagPrompt {
    parse_tags_with_origin(text, Origin::UserEdit)
}

pub fn parse_tags_with_origin(text: &str, origin: Origin) -> TagPrompt {
    let mut seen = HashSet::new();
    let mut fragments = Vec::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() || !seen.insert(dedupe_key(piece)) {
            continue;
        }
        fragments.push(Fragment {
            text: piece.to_string(),
            origin,
            aspect: None,
        });
    }
    TagPrompt { fragments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_joins_with_comma_space() {
        let p = TagPrompt::from_texts(
            &["stylized artistic rendering of a cat", "exaggerated large blue eyes"],
            Origin::Candidate,
        )
        .unwrap();
        assert_eq!(
            render(&p),
            "stylized artistic rendering of a cat, exaggerated large blue eyes"
        );
        assert_eq!(render(&TagPrompt::empty()), "");
        let single = TagPrompt::from_texts(&["a"], Origin::Init).unwrap();
        assert_eq!(render(&single), "a");
    }

    #[test]
    fn parse_trims_and_dedupes() {
        assert_eq!(parse_tags("cat,  cat , dog").texts(), vec!["cat", "dog"]);
        assert!(parse_tags("").is_empty());
        assert!(parse_tags(" , ,, ").is_empty());
        let p = parse_tags("imaginative landscape, surreal quality, exaggerated proportions");
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn dedupe_collapses_case_and_inner_whitespace() {
        let p = parse_tags("Blue  Bow, blue bow,BLUE BOW");
        assert_eq!(p.texts(), vec!["Blue  Bow"]);
    }

    #[test]
    fn fragments_reject_empty_and_commas() {
        assert!(Fragment::new("   ", Origin::Init).is_err());
        assert!(Fragment::new("a, b", Origin::Init).is_err());
        assert!(TagPrompt::from_texts(&["ok", ""], Origin::Init).is_err());
    }

    #[test]
    fn deserialize_enforces_invariants() {
        let dup = r#"[{"text":"cat","origin":"init"},{"text":"CAT","origin":"candidate"}]"#;
        assert!(serde_json::from_str::<TagPrompt>(dup).is_err());
        let ok = r#"[{"text":" cat ","origin":"init","aspect":"content"}]"#;
        let p: TagPrompt = serde_json::from_str(ok).unwrap();
        assert_eq!(p.fragments()[0].text, "cat");
        assert_eq!(p.fragments()[0].aspect, Some(Aspect::Content));
    }

    fn fragment_text() -> impl Strategy<Value = String> {
        "[a-zA-Z][a-zA-Z ]{0,12}[a-zA-Z]?".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn parse_render_roundtrip(texts in proptest::collection::vec(fragment_text(), 0..8)) {
            let p = TagPrompt::from_fragments(
                texts.iter().map(|t| Fragment::new(t, Origin::UserEdit).unwrap()),
            );
            prop_assert_eq!(parse_tags(&render(&p)), p);
        }

        #[test]
        fn parse_is_idempotent(text in "[a-zA-Z ,]{0,60}") {
            let once = parse_tags(&text);
            prop_assert_eq!(parse_tags(&render(&once)), once);
        }
    }
}
