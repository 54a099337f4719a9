//! Instruction templates with `{name}` placeholders.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());

pub const COMPARE_DIFFERENCE: &str = "compare_difference";
pub const GENERATE_CANDIDATES: &str = "generate_candidates";
pub const DESCRIBE_CONTENT: &str = "describe_content";
pub const DESCRIBE_STYLE: &str = "describe_style";
pub const COMPARE_DESCRIPTIONS: &str = "compare_descriptions";
pub const CLASSIFY_TAGS: &str = "classify_tags";

pub const TEMPLATE_NAMES: [&str; 6] = [
    COMPARE_DIFFERENCE,
    GENERATE_CANDIDATES,
    DESCRIBE_CONTENT,
    DESCRIBE_STYLE,
    COMPARE_DESCRIPTIONS,
    CLASSIFY_TAGS,
];

const DEFAULT_COMPARE_DIFFERENCE: &str = "The first image is Image 1 and the second image is Image 2. You need to describe the difference between Image 1 and Image 2. Let's think step by step.";

const DEFAULT_GENERATE_CANDIDATES: &str = "Generate image promts that incorporate the following difference between Image 1 and Image 2: {difference}.\nFor the specific contrasts identified in the differences between Image 1 and Image 2, the image prompts should guide the creation of images that align more closely with Image 1.\nThe prompts should be structured as a series of keywords or short phrases, separated by commas. Please list all possible prompts in a python list format. Your answer should only contain a python list. Let's think step by step.";

const DEFAULT_DESCRIBE_CONTENT: &str = "You are an expert in describing image, please describe the content of the image. This includes indentifying objects, environments, events, background, actions, etc. in the image.";

const DEFAULT_DESCRIBE_STYLE: &str = "You are an expert in image analysis, please describe the style of the image. This includes identifying the medium of the image, the art style, the artist's style, the creative technique, the lighting, the colours and the resolution, etc.";

const DEFAULT_COMPARE_DESCRIPTIONS: &str = "I have descriptions of Image 1 and Image 2.\nThe descriptions of Image 1: {image1}\nThe descriptions of Image 2: {image2}\nPlease identify the differences between Image 1 and Image 2 based on their descriptions. Let's think step by step.";

const DEFAULT_CLASSIFY_TAGS: &str = "Classify each of the following image prompt tags as describing either the content of the image (objects, characters, environments, events, actions, composition) or its style (medium, art style, artist, technique, lighting, colours, mood, quality).\nTags:\n{tags}\nAnswer only with a JSON object of the form {\"content\": [...], \"style\": [...]} in which every tag appears exactly once.";

/// Names of every `{placeholder}` in `text`, in order of first appearance.
pub fn placeholders_in(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    PLACEHOLDER
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|name| seen.insert(name.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
    pub placeholders: Vec<String>,
}

impl PromptTemplate {
    /// Checks that the declared placeholders match the ones in `text` exactly.
    pub fn new(name: &str, text: &str, placeholders: &[&str]) -> Result<Self> {
        let found: BTreeSet<String> = placeholders_in(text).into_iter().collect();
        let declared: BTreeSet<String> = placeholders.iter().map(|s| s.to_string()).collect();
        if found != declared {
            return Err(Error::InvalidTemplate {
                name: name.to_string(),
                detail: format!("placeholders {found:?} do not match required {declared:?}"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            text: text.to_string(),
            placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Fills every placeholder in one pass. Inserted values are not re-scanned.
    pub fn instantiate(&self, values: &[(&str, &str)]) -> Result<String> {
        let map: HashMap<&str, &str> = values.iter().copied().collect();
        if let Some(missing) = self.placeholders.iter().find(|p| !map.contains_key(p.as_str())) {
            return Err(Error::InvalidTemplate {
                name: self.name.clone(),
                detail: format!("no value for placeholder {{{missing}}}"),
            });
        }
        Ok(PLACEHOLDER
            .replace_all(&self.text, |c: &regex::Captures<'_>| {
                map.get(&c[1]).map_or_else(|| c[0].to_string(), |v| v.to_string())
            })
            .into_owned())
    }
}

/// The full set of instructions used by prompt generation and editing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub compare_difference: PromptTemplate,
    pub generate_candidates: PromptTemplate,
    pub describe_content: PromptTemplate,
    pub describe_style: PromptTemplate,
    pub compare_descriptions: PromptTemplate,
    pub classify_tags: PromptTemplate,
}

fn required_placeholders(name: &str) -> &'static [&'static str] {
    match name {
        GENERATE_CANDIDATES => &["difference"],
        COMPARE_DESCRIPTIONS => &["image1", "image2"],
        CLASSIFY_TAGS => &["tags"],
        _ => &[],
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        let t = |name, text| PromptTemplate::new(name, text, required_placeholders(name)).unwrap();
        Self {
            compare_difference: t(COMPARE_DIFFERENCE, DEFAULT_COMPARE_DIFFERENCE),
            generate_candidates: t(GENERATE_CANDIDATES, DEFAULT_GENERATE_CANDIDATES),
            describe_content: t(DESCRIBE_CONTENT, DEFAULT_DESCRIBE_CONTENT),
            describe_style: t(DESCRIBE_STYLE, DEFAULT_DESCRIBE_STYLE),
            compare_descriptions: t(COMPARE_DESCRIPTIONS, DEFAULT_COMPARE_DESCRIPTIONS),
            classify_tags: t(CLASSIFY_TAGS, DEFAULT_CLASSIFY_TAGS),
        }
    }
}

impl TemplateSet {
    /// Defaults with the given name → text overrides applied.
    pub fn with_overrides(overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut set = Self::default();
        for (name, text) in overrides {
            let template = PromptTemplate::new(name, text, required_placeholders(name))?;
            match name.as_str() {
                COMPARE_DIFFERENCE => set.compare_difference = template,
                GENERATE_CANDIDATES => set.generate_candidates = template,
                DESCRIBE_CONTENT => set.describe_content = template,
                DESCRIBE_STYLE => set.describe_style = template,
                COMPARE_DESCRIPTIONS => set.compare_descriptions = template,
                CLASSIFY_TAGS => set.classify_tags = template,
                other => {
                    return Err(Error::InvalidTemplate {
                        name: other.to_string(),
                        detail: format!("unknown template; expected one of {TEMPLATE_NAMES:?}"),
                    })
                }
            }
        }
        Ok(set)
    }

    /// Loads a JSON object of name → text overrides.
    pub fn from_override_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: BTreeMap<String, String> = serde_json::from_str(&text)?;
        Self::with_overrides(&overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_declare_their_placeholders() {
        let set = TemplateSet::default();
        assert_eq!(set.generate_candidates.placeholders, vec!["difference"]);
        assert_eq!(set.compare_descriptions.placeholders, vec!["image1", "image2"]);
        assert!(set.compare_difference.placeholders.is_empty());
        // the JSON example braces in the classifier template are not placeholders
        assert_eq!(placeholders_in(&set.classify_tags.text), vec!["tags"]);
    }

    #[test]
    fn default_texts_match_published_wording() {
        let set = TemplateSet::default();
        assert!(set
            .compare_difference
            .text
            .starts_with("The first image is Image 1 and the second image is Image 2."));
        assert!(set.generate_candidates.text.contains("in a python list format"));
        assert!(set.generate_candidates.text.starts_with("Generate image promts"));
        assert!(set.describe_content.text.contains("indentifying objects"));
        assert!(set.compare_descriptions.text.contains("based on their descriptions"));
    }

    #[test]
    fn instantiate_fills_once() {
        let set = TemplateSet::default();
        let out = set
            .compare_descriptions
            .instantiate(&[("image1", "has {image2} literally"), ("image2", "B")])
            .unwrap();
        assert!(out.contains("Image 1: has {image2} literally\n"));
        assert!(out.contains("Image 2: B\n"));
        assert!(set.compare_descriptions.instantiate(&[("image1", "x")]).is_err());
    }

    #[test]
    fn overrides_are_validated() {
        let mut o = BTreeMap::new();
        o.insert(GENERATE_CANDIDATES.to_string(), "list {difference} please".to_string());
        let set = TemplateSet::with_overrides(&o).unwrap();
        assert_eq!(set.generate_candidates.text, "list {difference} please");

        o.insert(GENERATE_CANDIDATES.to_string(), "no placeholder".to_string());
        assert!(TemplateSet::with_overrides(&o).is_err());

        let mut bad = BTreeMap::new();
        bad.insert("nope".to_string(), "x".to_string());
        assert!(TemplateSet::with_overrides(&bad).is_err());
    }

    #[test]
    fn override_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(&path, r#"{"describe_style": "Style please."}"#).unwrap();
        let set = TemplateSet::from_override_file(&path).unwrap();
        assert_eq!(set.describe_style.text, "Style please.");
    }
}
