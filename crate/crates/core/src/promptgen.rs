//! Textual gradients: difference descriptions and the candidate fragments derived from them.
//!
//! Two routes produce a [`DifferenceSet`]. The vanilla route sends reference and generated image
//! to the vision-language model in one call. The enhanced route describes each image separately
//! (content, then style) and has the language model compare the descriptions per aspect, which
//! works with single-image models. Either way the language model then turns the differences into
//! a python-style list of short fragments.

use std::sync::{Arc, LazyLock};
use std::thread;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::prompt::{dedupe_key, Aspect, Fragment, Origin, TagPrompt};
use crate::providers::{ChatModel, ChatTurn};
use crate::template::TemplateSet;

pub const DEFAULT_CANDIDATE_CAP: usize = 16;

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s+").unwrap());

const QUOTES: &[char] = &['\'', '"', '`', '“', '”', '‘', '’'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Vanilla,
    Enhanced,
}

/// Framework requested by configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameworkChoice {
    #[default]
    Auto,
    Vanilla,
    Enhanced,
}

/// Vanilla needs a model that takes both images in one call; anything else goes enhanced.
pub fn route(choice: FrameworkChoice, vlm_max_images: usize) -> Framework {
    match choice {
        FrameworkChoice::Enhanced => Framework::Enhanced,
        FrameworkChoice::Auto | FrameworkChoice::Vanilla if vlm_max_images >= 2 => Framework::Vanilla,
        _ => Framework::Enhanced,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDescription {
    pub content: String,
    pub style: String,
}

impl ImageDescription {
    pub fn new(content: impl Into<String>, style: impl Into<String>) -> Result<Self> {
        let d = Self {
            content: content.into().trim().to_string(),
            style: style.into().trim().to_string(),
        };
        if d.content.is_empty() && d.style.is_empty() {
            return Err(Error::Precondition("image description is empty".into()));
        }
        Ok(d)
    }

    fn part(&self, aspect: Aspect) -> &str {
        match aspect {
            Aspect::Content => &self.content,
            Aspect::Style => &self.style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceSet {
    pub blocks: Vec<String>,
    pub framework: Framework,
    /// One entry per block.
    pub aspect_tags: Vec<Option<Aspect>>,
}

impl DifferenceSet {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn text(&self) -> String {
        self.blocks.join("\n")
    }
}

/// Splits a reply into one block per enumerated item; unenumerated replies stay whole.
pub fn split_blocks(reply: &str) -> Vec<String> {
    let reply = reply.trim();
    if reply.is_empty() {
        return Vec::new();
    }
    if !reply.lines().any(|l| LIST_MARKER.is_match(l)) {
        return vec![reply.to_string()];
    }
    let mut blocks: Vec<String> = Vec::new();
    let mut preamble = true;
    for line in reply.lines() {
        if LIST_MARKER.is_match(line) {
            blocks.push(line.trim().to_string());
            preamble = false;
        } else if !line.trim().is_empty() && !preamble {
            let last = blocks.last_mut().expect("an item precedes continuation lines");
            last.push('\n');
            last.push_str(line.trim());
        }
    }
    blocks
}

fn strip_quotes(s: &str) -> String {
    s.trim().trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c)).to_string()
}

/// Scans a bracketed list starting just after `[`. Returns the raw top-level items, or `None` if
/// the list never closes.
fn scan_list(chars: &[char]) -> Option<(Vec<String>, usize)> {
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(q) = quote {
            cur.push(c);
            if c == q {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if matches!(next, None | Some(',') | Some(']')) {
                    quote = None;
                }
            }
            i += 1;
            continue;
        }
        match c {
            '\'' | '"' | '“' | '‘' if cur.trim().is_empty() => {
                quote = Some(match c {
                    '“' => '”',
                    '‘' => '’',
                    other => other,
                });
                cur.push(c);
            }
            '[' | '(' | '{' => {
                depth += 1;
                cur.push(c);
            }
            ']' if depth == 0 => {
                items.push(cur);
                return Some((items, i + 1));
            }
            ']' | ')' | '}' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => items.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
        i += 1;
    }
    None
}

fn clean_items(items: Vec<String>, out: &mut Vec<String>) {
    for item in items {
        let trimmed = item.trim();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let chars: Vec<char> = rest.chars().collect();
            if let Some((nested, _)) = scan_list(&chars) {
                clean_items(nested, out);
                continue;
            }
        }
        let cleaned = strip_quotes(trimmed.trim_matches(|c| c == '[' || c == ']'));
        if !cleaned.is_empty() {
            out.push(cleaned);
        }
    }
}

/// Extracts fragments from a model reply that should hold a python-style list.
///
/// The first bracketed list wins; top-level commas split it and quotes are stripped. Replies
/// without a usable list fall back to splitting the whole text on lines and commas.
pub fn parse_candidate_list(text: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    if let Some(start) = chars.iter().position(|&c| c == '[') {
        if let Some((items, _)) = scan_list(&chars[start + 1..]) {
            let mut out = Vec::new();
            clean_items(items, &mut out);
            if !out.is_empty() {
                return Ok(out);
            }
        }
    }
    let mut out = Vec::new();
    for line in text.lines() {
        let line = LIST_MARKER.replace(line, "");
        for piece in line.split(',') {
            let cleaned = strip_quotes(piece.trim_matches(|c: char| c == '[' || c == ']' || c.is_whitespace()));
            let cleaned = strip_quotes(cleaned.trim_matches(|c| c == '[' || c == ']'));
            if !cleaned.is_empty() {
                out.push(cleaned);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::ParseFailure(format!("no candidate list in {text:?}")));
    }
    Ok(out)
}

/// Drives the vision-language and language models through the prompt-generation templates.
#[derive(Clone)]
pub struct PromptGenerator {
    vlm: Arc<dyn ChatModel>,
    llm: Arc<dyn ChatModel>,
    templates: Arc<TemplateSet>,
    candidate_cap: usize,
}

impl PromptGenerator {
    pub fn new(vlm: Arc<dyn ChatModel>, llm: Arc<dyn ChatModel>, templates: Arc<TemplateSet>) -> Self {
        Self {
            vlm,
            llm,
            templates,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }

    pub fn with_candidate_cap(mut self, cap: usize) -> Self {
        self.candidate_cap = cap;
        self
    }

    pub fn vlm_max_images(&self) -> usize {
        self.vlm.max_images()
    }

    /// One multi-image call comparing the reference (Image 1) with the generated image (Image 2).
    pub fn vanilla_differences(&self, reference: &ImageRef, generated: &ImageRef) -> Result<DifferenceSet> {
        let instruction = self.templates.compare_difference.instantiate(&[])?;
        let turn = ChatTurn::user_with_images(instruction, vec![reference.clone(), generated.clone()])?;
        let reply = self.vlm.chat(&[turn])?;
        let blocks = split_blocks(&reply);
        if blocks.is_empty() {
            return Err(Error::ParseFailure("empty difference description".into()));
        }
        Ok(DifferenceSet {
            aspect_tags: vec![None; blocks.len()],
            blocks,
            framework: Framework::Vanilla,
        })
    }

    /// Content and style descriptions of one image, requested concurrently.
    pub fn enhanced_describe(&self, image: &ImageRef) -> Result<ImageDescription> {
        let content_text = self.templates.describe_content.instantiate(&[])?;
        let style_text = self.templates.describe_style.instantiate(&[])?;
        let ask = |text: String| -> Result<String> {
            let turn = ChatTurn::user_with_images(text, vec![image.clone()])?;
            Ok(self.vlm.chat(&[turn])?)
        };
        let (content, style) = thread::scope(|s| {
            let style = s.spawn(|| ask(style_text));
            let content = ask(content_text);
            (content, style.join().expect("describe thread panicked"))
        });
        ImageDescription::new(content?, style?)
    }

    /// Per-aspect comparison of two descriptions. Aspects empty on both sides are skipped.
    pub fn enhanced_differences(
        &self,
        reference: &ImageDescription,
        generated: &ImageDescription,
    ) -> Result<DifferenceSet> {
        let aspects: Vec<Aspect> = [Aspect::Content, Aspect::Style]
            .into_iter()
            .filter(|&a| !(reference.part(a).is_empty() && generated.part(a).is_empty()))
            .collect();
        let compare = |aspect: Aspect| -> Result<String> {
            let text = self.templates.compare_descriptions.instantiate(&[
                ("image1", reference.part(aspect)),
                ("image2", generated.part(aspect)),
            ])?;
            Ok(self.llm.chat(&[ChatTurn::user(text)?])?)
        };
        let replies: Vec<Result<String>> = thread::scope(|s| {
            let handles: Vec<_> = aspects.iter().map(|&a| s.spawn(move || compare(a))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("compare thread panicked"))
                .collect()
        });
        let mut blocks = Vec::new();
        let mut aspect_tags = Vec::new();
        for (aspect, reply) in aspects.into_iter().zip(replies) {
            for block in split_blocks(&reply?) {
                blocks.push(block);
                aspect_tags.push(Some(aspect));
            }
        }
        if blocks.is_empty() {
            return Err(Error::ParseFailure("empty difference description".into()));
        }
        Ok(DifferenceSet {
            blocks,
            framework: Framework::Enhanced,
            aspect_tags,
        })
    }

    /// Routed difference step for one iteration. `reference_desc` lets callers reuse the
    /// reference description across iterations.
    pub fn differences(
        &self,
        framework: Framework,
        reference: &ImageRef,
        reference_desc: Option<&ImageDescription>,
        generated: &ImageRef,
    ) -> Result<DifferenceSet> {
        match framework {
            Framework::Vanilla => self.vanilla_differences(reference, generated),
            Framework::Enhanced => {
                let owned;
                let ref_desc = match reference_desc {
                    Some(d) => d,
                    None => {
                        owned = self.enhanced_describe(reference)?;
                        &owned
                    }
                };
                let gen_desc = self.enhanced_describe(generated)?;
                self.enhanced_differences(ref_desc, &gen_desc)
            }
        }
    }

    /// Asks the language model for candidate fragments.
    ///
    /// Vanilla differences are sent in one call. Aspect-tagged differences are sent one call per
    /// aspect so each fragment inherits its aspect. Fragments already in `current` are dropped
    /// before the cap applies.
    pub fn generate_candidates(&self, diffs: &DifferenceSet, current: &TagPrompt) -> Result<Vec<Fragment>> {
        if diffs.is_empty() {
            return Err(Error::Precondition("no differences to generate candidates from".into()));
        }
        let mut groups: Vec<(Option<Aspect>, Vec<&str>)> = Vec::new();
        for (block, tag) in diffs.blocks.iter().zip(&diffs.aspect_tags) {
            match groups.iter_mut().find(|(a, _)| a == tag) {
                Some((_, blocks)) => blocks.push(block),
                None => groups.push((*tag, vec![block])),
            }
        }

        let mut out = TagPrompt::empty();
        let mut parsed_any = false;
        let mut last_failure = None;
        for (aspect, blocks) in groups {
            let text = self
                .templates
                .generate_candidates
                .instantiate(&[("difference", &blocks.join("\n"))])?;
            let reply = self.llm.chat(&[ChatTurn::user(text)?])?;
            let items = match parse_candidate_list(&reply) {
                Ok(items) => items,
                Err(e) => {
                    last_failure = Some(e);
                    continue;
                }
            };
            parsed_any = true;
            for item in items {
                for piece in item.split(',') {
                    if let Ok(f) = Fragment::new(piece, Origin::Candidate) {
                        if !current.contains(&f.text) {
                            out.push(f.with_aspect(aspect));
                        }
                    }
                }
            }
        }
        if !parsed_any {
            return Err(last_failure.unwrap_or_else(|| Error::ParseFailure("no reply".into())));
        }
        let mut fragments: Vec<Fragment> = out.fragments().to_vec();
        fragments.truncate(self.candidate_cap);
        Ok(fragments)
    }
}

/// Whether two fragment lists hold the same texts under the dedupe rule.
pub fn same_fragment_set(a: &[String], b: &[String]) -> bool {
    let mut ka: Vec<String> = a.iter().map(|s| dedupe_key(s)).collect();
    let mut kb: Vec<String> = b.iter().map(|s| dedupe_key(s)).collect();
    ka.sort();
    kb.sort();
    ka == kb
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::providers::mock::{self, planted_image, MockBackend};
    use crate::providers::{ProviderError, ProviderResult};
    use crate::template::placeholders_in;

    const FIG10_LIST: &str = "[stylized artistic rendering of a cat, exaggerated large blue eyes, light blue silky bow tie, smooth fur texture, cool tone background, serene mood, whimsical feel, illustrative and fantastical style, soft texture visual, monochromatic color scheme]";

    /// Replays canned replies and records every outgoing message.
    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<String>>,
        max_images: usize,
    }

    impl Scripted {
        fn new(replies: &[&str], max_images: usize) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
                max_images,
            })
        }
    }

    impl ChatModel for Scripted {
        fn chat(&self, turns: &[ChatTurn]) -> ProviderResult<String> {
            crate::providers::check_turns(crate::providers::Role::Llm, turns, self.max_images)?;
            self.seen.lock().unwrap().extend(turns.iter().map(|t| t.text.clone()));
            self.replies
                .lock()
                .unwrap()
                .pop()
                .ok_or(ProviderError::Precondition("script exhausted".into()))
        }
        fn max_images(&self) -> usize {
            self.max_images
        }
    }

    fn mock_gen() -> PromptGenerator {
        let m: Arc<MockBackend> = Arc::new(MockBackend::default());
        PromptGenerator::new(m.clone(), m, Arc::default())
    }

    #[test]
    fn routing() {
        assert_eq!(route(FrameworkChoice::Auto, 2), Framework::Vanilla);
        assert_eq!(route(FrameworkChoice::Auto, 1), Framework::Enhanced);
        assert_eq!(route(FrameworkChoice::Vanilla, 1), Framework::Enhanced);
        assert_eq!(route(FrameworkChoice::Enhanced, 4), Framework::Enhanced);
    }

    #[test]
    fn parses_published_candidate_list() {
        let items = parse_candidate_list(FIG10_LIST).unwrap();
        assert_eq!(items.len(), 10);
        assert_eq!(items[0], "stylized artistic rendering of a cat");
        assert_eq!(items[9], "monochromatic color scheme");
    }

    #[test]
    fn parses_preamble_and_quotes() {
        assert_eq!(
            parse_candidate_list("Sure! Here you go: ['cat', 'dog']").unwrap(),
            vec!["cat", "dog"]
        );
        assert_eq!(
            parse_candidate_list("```python\n[\"a, b\", 'artist's style']\n```").unwrap(),
            vec!["a, b", "artist's style"]
        );
        assert_eq!(parse_candidate_list("[['x', 'y'], ['z']]").unwrap(), vec!["x", "y", "z"]);
        assert!(matches!(parse_candidate_list(""), Err(Error::ParseFailure(_))));
        assert!(matches!(parse_candidate_list("[]"), Err(Error::ParseFailure(_))));
        assert!(matches!(parse_candidate_list(" [ '' , \"\" ] "), Err(Error::ParseFailure(_))));
    }

    #[test]
    fn falls_back_to_lines_and_commas() {
        assert_eq!(
            parse_candidate_list("1. red fox\n2. ink painting, misty\n- 'night'").unwrap(),
            vec!["red fox", "ink painting", "misty", "night"]
        );
        assert_eq!(parse_candidate_list("[a, b").unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn split_blocks_enumerated_or_whole() {
        let enumerated = "Here:\n1. Color scheme: gray\n   and blue\n2. Subject: cat";
        assert_eq!(
            split_blocks(enumerated),
            vec!["1. Color scheme: gray\nand blue", "2. Subject: cat"]
        );
        let paragraph = "Image 1 and Image 2 both feature a cat wearing a bow tie, but there are notable differences.";
        assert_eq!(split_blocks(paragraph), vec![paragraph]);
        assert!(split_blocks("  ").is_empty());
    }

    #[test]
    fn vanilla_with_recorded_transcript() {
        let recorded = "Image 1 and Image 2 both feature a cat wearing a bow tie, but there are notable differences. Image 1 depicts a cat with a more stylized and artistic rendering.";
        let vlm = Scripted::new(&[recorded], 2);
        let llm = Scripted::new(&[FIG10_LIST], 1);
        let gen = PromptGenerator::new(vlm.clone(), llm.clone(), Arc::default());
        let img = planted_image(&["cat"], 4, 4);
        let diffs = gen.vanilla_differences(&img, &img).unwrap();
        assert_eq!(diffs.blocks.len(), 1);
        assert!(diffs.blocks[0].starts_with("Image 1 and Image 2 both feature a cat wearing a bow tie"));
        assert_eq!(diffs.framework, Framework::Vanilla);

        let cands = gen.generate_candidates(&diffs, &TagPrompt::empty()).unwrap();
        assert_eq!(cands.len(), 10);
        assert_eq!(cands[0].text, "stylized artistic rendering of a cat");
        let sent = llm.seen.lock().unwrap();
        assert!(sent[0].contains(recorded));
        for msg in sent.iter().chain(vlm.seen.lock().unwrap().iter()) {
            assert!(placeholders_in(msg).is_empty(), "unresolved placeholder in {msg}");
        }
    }

    #[test]
    fn vanilla_rejects_single_image_models() {
        let gen = PromptGenerator::new(Scripted::new(&[], 1), Scripted::new(&[], 1), Arc::default());
        let img = planted_image(&["cat"], 4, 4);
        assert!(matches!(
            gen.vanilla_differences(&img, &img),
            Err(Error::Provider(ProviderError::UnsupportedMultiImage { .. }))
        ));
    }

    #[test]
    fn mock_vanilla_identical_images() {
        let img = planted_image(&["cat", "blue"], 4, 4);
        let diffs = mock_gen().vanilla_differences(&img, &img).unwrap();
        assert_eq!(diffs.blocks.len(), 1);
        assert!(diffs.blocks[0].contains("no planted-word difference"));
    }

    #[test]
    fn mock_describe() {
        let d = mock_gen().enhanced_describe(&planted_image(&["cat"], 4, 4)).unwrap();
        assert_eq!(d.content, "cat");
        assert_eq!(d.style, mock::STYLE_SENTENCE);
        let corrupt = ImageRef::raw(b"junk".to_vec(), 1, 1, None);
        assert!(mock_gen().enhanced_describe(&corrupt).is_err());
    }

    #[test]
    fn recorded_enhanced_transcripts() {
        let content = "The image portrays a black cat, adorned with a blue bow tie, standing against a gray background.";
        let style = "The medium of the image is digital art, as evidenced by the crisp lines and smooth gradients.";
        let vlm = Scripted::new(&[content, style], 1);
        let llm_content = "1. Color scheme: Image 1 features a predominantly gray and blue color scheme.\n2. Subject: Image 1 features a black cat with a blue bow tie.";
        let llm = Scripted::new(&[llm_content, "1. Medium: both digital art."], 1);
        let gen = PromptGenerator::new(vlm, llm, Arc::default());
        let d = gen.enhanced_describe(&planted_image(&["cat"], 4, 4)).unwrap();
        // the two describe calls may interleave; both replies land somewhere
        let both = format!("{} {}", d.content, d.style);
        assert!(both.contains("The image portrays a black cat"));
        assert!(both.contains("digital art"));

        let reference = ImageDescription::new("black cat", "digital art").unwrap();
        let generated = ImageDescription::new("white cat", "photo").unwrap();
        let diffs = gen.enhanced_differences(&reference, &generated).unwrap();
        assert_eq!(diffs.framework, Framework::Enhanced);
        assert_eq!(diffs.blocks.len(), 3);
        assert!(diffs.blocks.iter().any(|b| b.starts_with("1. Color scheme:")));
        assert!(diffs.aspect_tags.iter().all(Option::is_some));
    }

    #[test]
    fn mock_enhanced_differences() {
        let gen = mock_gen();
        let a = ImageDescription::new("cat bow", mock::STYLE_SENTENCE).unwrap();
        let same = gen.enhanced_differences(&a, &a).unwrap();
        assert_eq!(same.blocks, vec![mock::NO_DIFFERENCES, mock::NO_DIFFERENCES]);

        let content_only = ImageDescription::new("cat bow", "").unwrap();
        let d = gen.enhanced_differences(&content_only, &content_only).unwrap();
        assert_eq!(d.blocks, vec![mock::NO_DIFFERENCES]);
        assert_eq!(d.aspect_tags, vec![Some(Aspect::Content)]);

        let b = ImageDescription::new("dog", mock::STYLE_SENTENCE).unwrap();
        let d = gen.enhanced_differences(&a, &b).unwrap();
        assert!(d.blocks[0].starts_with("1. Image 1 mentions"));
        assert!(d.blocks[1].starts_with("2. Image 2 mentions dog"));
        let cands = gen.generate_candidates(&d, &TagPrompt::empty()).unwrap();
        let mut texts: Vec<_> = cands.iter().map(|f| f.text.as_str()).collect();
        texts.sort();
        assert_eq!(texts, vec!["bow", "cat"]);
        assert!(cands.iter().all(|f| f.aspect == Some(Aspect::Content)));
    }

    #[test]
    fn mock_candidates_from_missing_words() {
        let gen = mock_gen();
        let diffs = DifferenceSet {
            blocks: vec!["Image 1 shows blue, bow which Image 2 lacks.".into()],
            framework: Framework::Vanilla,
            aspect_tags: vec![None],
        };
        let cands = gen.generate_candidates(&diffs, &TagPrompt::empty()).unwrap();
        assert_eq!(cands.iter().map(|f| f.text.as_str()).collect::<Vec<_>>(), vec!["blue", "bow"]);
        let empty = DifferenceSet {
            blocks: vec![],
            framework: Framework::Vanilla,
            aspect_tags: vec![],
        };
        assert!(matches!(
            gen.generate_candidates(&empty, &TagPrompt::empty()),
            Err(Error::Precondition(_))
        ));
        let nothing = DifferenceSet {
            blocks: vec!["There is no planted-word difference.".into()],
            framework: Framework::Vanilla,
            aspect_tags: vec![None],
        };
        assert!(matches!(
            gen.generate_candidates(&nothing, &TagPrompt::empty()),
            Err(Error::ParseFailure(_))
        ));
    }

    #[test]
    fn candidate_cap_and_splitting() {
        let reply = "['a, b', 'c', 'd', 'A', 'e']";
        let llm = Scripted::new(&[reply], 1);
        let gen = PromptGenerator::new(llm.clone(), llm, Arc::default()).with_candidate_cap(3);
        let diffs = DifferenceSet {
            blocks: vec!["x".into()],
            framework: Framework::Vanilla,
            aspect_tags: vec![None],
        };
        let current = TagPrompt::from_texts(&["c"], Origin::Init).unwrap();
        let cands = gen.generate_candidates(&diffs, &current).unwrap();
        assert_eq!(cands.iter().map(|f| f.text.as_str()).collect::<Vec<_>>(), vec!["a", "b", "d"]);
    }
}
