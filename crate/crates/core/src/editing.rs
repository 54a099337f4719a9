//! Content/style classification of reverse prompts, tag edits, and fusion across images.

use std::collections::HashSet;

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{dedupe_key, Aspect, Fragment, Origin, TagPrompt};
use crate::providers::{ChatModel, ChatTurn};
use crate::template::TemplateSet;

pub const EXTERNAL_ORIGIN: &str = "external";

/// A prompt split into content and style fragments; every fragment lands in exactly one part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPrompt {
    pub content: Vec<Fragment>,
    pub style: Vec<Fragment>,
    /// Run id the prompt came from, or `external`.
    #[serde(default = "external")]
    pub origin: String,
}

fn external() -> String {
    EXTERNAL_ORIGIN.into()
}

impl ClassifiedPrompt {
    /// Builds a partition from per-fragment aspects. Untagged fragments count as content.
    pub fn from_tagged(prompt: &TagPrompt, origin: impl Into<String>) -> Self {
        let mut out = Self {
            content: Vec::new(),
            style: Vec::new(),
            origin: origin.into(),
        };
        for f in prompt.fragments() {
            match f.aspect {
                Some(Aspect::Style) => out.style.push(f.clone()),
                _ => out.content.push(f.clone().with_aspect(Some(Aspect::Content))),
            }
        }
        out
    }

    /// Content then style, as one prompt.
    pub fn to_prompt(&self) -> TagPrompt {
        TagPrompt::from_fragments(self.content.iter().chain(&self.style).cloned())
    }

    /// Applies [`modify`] to one part, or to both when `aspect` is `None`. A fragment that
    /// collides with one already kept is dropped, content first.
    pub fn modify(&self, aspect: Option<Aspect>, find: &str, replace: &str) -> Result<Self> {
        let part = |frags: &[Fragment], a: Aspect| -> Result<Vec<Fragment>> {
            let p = TagPrompt::from_fragments(frags.iter().cloned());
            if aspect.is_none_or(|x| x == a) {
                Ok(modify(&p, find, replace)?.fragments().to_vec())
            } else {
                Ok(p.fragments().to_vec())
            }
        };
        let content = part(&self.content, Aspect::Content)?;
        let style = part(&self.style, Aspect::Style)?;
        let keys: HashSet<String> = content.iter().map(Fragment::key).collect();
        let style = style.into_iter().filter(|f| !keys.contains(&f.key())).collect();
        Ok(Self {
            content,
            style,
            origin: self.origin.clone(),
        })
    }
}

#[derive(Deserialize)]
struct ClassifyReply {
    #[serde(default)]
    content: Vec<String>,
    #[serde(default)]
    style: Vec<String>,
}

/// The JSON object inside a model reply, tolerating prose or code fences around it.
fn parse_classify_reply(reply: &str) -> Result<ClassifyReply> {
    let start = reply.find('{');
    let end = reply.rfind('}');
    match (start, end) {
        (Some(s), Some(e)) if s < e => serde_json::from_str(&reply[s..=e])
            .map_err(|err| Error::ParseFailure(format!("classification reply: {err}"))),
        _ => Err(Error::ParseFailure(format!("no JSON object in {reply:?}"))),
    }
}

/// Splits a prompt into content and style.
///
/// When every fragment already carries an aspect (enhanced runs) no model call is made.
/// Otherwise the untagged fragments go to the language model in one call. Fragments the model
/// omits, names twice, or answers unparseably for are assigned to content.
pub fn classify(
    prompt: &TagPrompt,
    llm: &dyn ChatModel,
    templates: &TemplateSet,
    origin: &str,
) -> Result<ClassifiedPrompt> {
    if prompt.is_empty() {
        return Err(Error::Precondition("cannot classify an empty prompt".into()));
    }
    let untagged: Vec<&Fragment> = prompt.fragments().iter().filter(|f| f.aspect.is_none()).collect();
    if untagged.is_empty() {
        return Ok(ClassifiedPrompt::from_tagged(prompt, origin));
    }

    let tags: String = untagged.iter().map(|f| format!("- {}\n", f.text)).collect();
    let text = templates.classify_tags.instantiate(&[("tags", tags.trim_end())])?;
    let reply = llm.chat(&[ChatTurn::user(text)?])?;
    let (content_keys, style_keys) = match parse_classify_reply(&reply) {
        Ok(r) => (
            r.content.iter().map(|s| dedupe_key(s)).collect::<HashSet<_>>(),
            r.style.iter().map(|s| dedupe_key(s)).collect::<HashSet<_>>(),
        ),
        Err(e) => {
            log::warn!("{e}; classifying every tag as content");
            (HashSet::new(), HashSet::new())
        }
    };

    let mut tagged = TagPrompt::empty();
    for f in prompt.fragments() {
        let aspect = f.aspect.unwrap_or_else(|| {
            let key = f.key();
            if style_keys.contains(&key) && !content_keys.contains(&key) {
                Aspect::Style
            } else {
                Aspect::Content
            }
        });
        tagged.push(f.clone().with_aspect(Some(aspect)));
    }
    Ok(ClassifiedPrompt::from_tagged(&tagged, origin))
}

/// Case-insensitive substring replacement inside every fragment, then re-normalization.
pub fn modify(prompt: &TagPrompt, find: &str, replace: &str) -> Result<TagPrompt> {
    if find.trim().is_empty() {
        return Err(Error::Precondition("find text is empty".into()));
    }
    let re = RegexBuilder::new(&regex::escape(find))
        .case_insensitive(true)
        .build()
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let mut out = TagPrompt::empty();
    for f in prompt.fragments() {
        if !re.is_match(&f.text) {
            out.push(f.clone());
            continue;
        }
        let edited = re.replace_all(&f.text, regex::NoExpand(replace));
        for piece in edited.split(',') {
            if let Ok(new) = Fragment::new(piece, Origin::UserEdit) {
                out.push(new.with_aspect(f.aspect));
            }
        }
    }
    Ok(out)
}

/// Content of one image followed by the style of another.
pub fn fuse(style_source: &ClassifiedPrompt, content_source: &ClassifiedPrompt) -> Result<TagPrompt> {
    let fused = TagPrompt::from_fragments(
        content_source
            .content
            .iter()
            .cloned()
            .chain(style_source.style.iter().cloned()),
    );
    if fused.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::providers::mock::MockBackend;
    use crate::providers::ProviderResult;

    const TABLE1_ARPO: &str = "imaginative landscape, surreal quality, exaggerated proportions, blend of realism and fantasy, dramatic sky, exploration,figures placed centrally, digital painting style with high level of detail and sense of depth";

    struct Canned {
        reply: String,
        calls: AtomicUsize,
    }

    impl Canned {
        fn new(reply: &str) -> Self {
            Self {
                reply: reply.into(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl ChatModel for Canned {
        fn chat(&self, _: &[ChatTurn]) -> ProviderResult<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
        fn max_images(&self) -> usize {
            1
        }
    }

    fn texts(frags: &[Fragment]) -> Vec<&str> {
        frags.iter().map(|f| f.text.as_str()).collect()
    }

    fn is_partition(source: &TagPrompt, c: &ClassifiedPrompt) -> bool {
        let mut keys: Vec<String> = c.content.iter().chain(&c.style).map(Fragment::key).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        let mut src: Vec<String> = source.fragments().iter().map(Fragment::key).collect();
        src.sort();
        n == keys.len() && keys == src
    }

    #[test]
    fn classifies_the_table_row() {
        let prompt = crate::prompt::parse_tags(TABLE1_ARPO);
        assert_eq!(prompt.len(), 8);
        let reply = r#"```json
{"content": ["imaginative landscape", "exaggerated proportions", "dramatic sky", "exploration", "figures placed centrally"],
 "style": ["surreal quality", "blend of realism and fantasy", "digital painting style with high level of detail and sense of depth"]}
```"#;
        let llm = Canned::new(reply);
        let c = classify(&prompt, &llm, &TemplateSet::default(), EXTERNAL_ORIGIN).unwrap();
        assert!(texts(&c.style).contains(&"digital painting style with high level of detail and sense of depth"));
        assert!(texts(&c.content).contains(&"figures placed centrally"));
        assert!(is_partition(&prompt, &c));
    }

    #[test]
    fn misbehaving_classifier_still_partitions() {
        let prompt = crate::prompt::parse_tags("a, b, c");
        for reply in [
            r#"{"content": ["a", "b"], "style": ["b", "zzz"]}"#,
            r#"{"style": []}"#,
            "not json at all",
            r#"{"content": 3}"#,
        ] {
            let c = classify(&prompt, &Canned::new(reply), &TemplateSet::default(), "r").unwrap();
            assert!(is_partition(&prompt, &c), "{reply}");
            assert!(c.style.is_empty());
        }
    }

    #[test]
    fn tagged_prompts_skip_the_model() {
        let prompt = TagPrompt::from_fragments([
            Fragment::new("cat", Origin::Candidate).unwrap().with_aspect(Some(Aspect::Content)),
            Fragment::new("ink", Origin::Candidate).unwrap().with_aspect(Some(Aspect::Style)),
        ]);
        let llm = Canned::new("{}");
        let c = classify(&prompt, &llm, &TemplateSet::default(), "run-1").unwrap();
        assert_eq!(llm.calls.load(Ordering::SeqCst), 0);
        assert_eq!(texts(&c.content), vec!["cat"]);
        assert_eq!(texts(&c.style), vec!["ink"]);
        assert_eq!(c.origin, "run-1");
    }

    #[test]
    fn mock_classifier() {
        let mock = MockBackend::default();
        let t = TemplateSet::default();
        let c = classify(&crate::prompt::parse_tags("cat"), &mock, &t, EXTERNAL_ORIGIN).unwrap();
        assert_eq!(texts(&c.content), vec!["cat"]);
        assert!(c.style.is_empty());
        let c = classify(&crate::prompt::parse_tags("red fox, ink wash, blurry"), &mock, &t, "x").unwrap();
        assert_eq!(texts(&c.content), vec!["red fox", "blurry"]);
        assert_eq!(texts(&c.style), vec!["ink wash"]);
    }

    #[test]
    fn classify_rejects_empty() {
        let llm = Canned::new("{}");
        assert!(classify(&TagPrompt::empty(), &llm, &TemplateSet::default(), "x").is_err());
    }

    #[test]
    fn modify_replaces_substrings() {
        let p = crate::prompt::parse_tags("imaginative landscape, dramatic sky");
        let out = modify(&p, "landscape", "cityscape").unwrap();
        assert_eq!(out.texts(), vec!["imaginative cityscape", "dramatic sky"]);
        assert_eq!(out.fragments()[0].origin, Origin::UserEdit);
        assert_eq!(modify(&p, "LANDSCAPE", "cityscape").unwrap(), out);
        assert_eq!(modify(&p, "zzz", "q").unwrap(), p);
        assert!(modify(&p, " ", "q").is_err());
    }

    #[test]
    fn modify_collapses_duplicates_and_empties() {
        let p = crate::prompt::parse_tags("boat on lake, tent on lake, sky");
        let out = modify(&p, "boat", "tent").unwrap();
        assert_eq!(out.texts(), vec!["tent on lake", "sky"]);
        let out = modify(&p, "sky", "").unwrap();
        assert_eq!(out.texts(), vec!["boat on lake", "tent on lake"]);
        let out = modify(&p, "sky", "$0 and sea").unwrap();
        assert_eq!(out.texts()[2], "$0 and sea");
    }

    #[test]
    fn classified_modify_touches_one_part() {
        let c = ClassifiedPrompt {
            content: vec![Fragment::new("digital painting of a lake", Origin::Init).unwrap()],
            style: vec![Fragment::new("digital painting style", Origin::Init).unwrap()],
            origin: EXTERNAL_ORIGIN.into(),
        };
        let out = c.modify(Some(Aspect::Style), "digital painting", "ink painting").unwrap();
        assert_eq!(texts(&out.content), vec!["digital painting of a lake"]);
        assert_eq!(texts(&out.style), vec!["ink painting style"]);
    }

    #[test]
    fn fuse_merges_and_dedupes() {
        let content = ClassifiedPrompt {
            content: vec![Fragment::new("a red fox", Origin::Init).unwrap()],
            style: vec![Fragment::new("photo", Origin::Init).unwrap()],
            origin: "a".into(),
        };
        let style = ClassifiedPrompt {
            content: vec![Fragment::new("a dog", Origin::Init).unwrap()],
            style: vec![
                Fragment::new("ink painting", Origin::Init).unwrap(),
                Fragment::new("A  Red fox", Origin::Init).unwrap(),
            ],
            origin: "b".into(),
        };
        assert_eq!(fuse(&style, &content).unwrap().texts(), vec!["a red fox", "ink painting"]);
        let empty = ClassifiedPrompt {
            content: vec![],
            style: vec![],
            origin: "e".into(),
        };
        assert!(matches!(fuse(&empty, &empty), Err(Error::EmptyResult)));
    }

    #[test]
    fn fuse_with_itself_keeps_the_fragment_set() {
        let llm = Arc::new(MockBackend::default());
        let p = crate::prompt::parse_tags("cat, watercolor, neon sky, boat");
        let c = classify(&p, llm.as_ref(), &TemplateSet::default(), "x").unwrap();
        let fused = fuse(&c, &c).unwrap();
        assert!(fused.same_texts(&c.to_prompt()));
        let mut a: Vec<_> = fused.texts();
        let mut b: Vec<_> = p.texts();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
