//! Deterministic offline backend.
//!
//! Images are real PNGs that carry a "planted" word set in a `tEXt` chunk. Every role is a pure
//! function of its inputs:
//!
//! * text embedding: L2-normalized indicator over a fixed 64-word vocabulary, with one extra axis
//!   that fires only when no vocabulary word is present;
//! * image embedding: the same indicator over the planted words;
//! * generation: plants the prompt's vocabulary words into a synthetic bitmap;
//! * caption: the planted words joined by spaces;
//! * chat: recognizes the engine's instructions and answers from planted-word set differences.
//!
//! Similarities are therefore hand-computable: for word sets `A` and `B`,
//! `cos = |A ∩ B| / sqrt(|A| |B|)`.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_turns, Captioner, ChatModel, ChatTurn, GenerationRequest, ImageEmbedder, ImageGenerator,
    ProviderError, ProviderResult, Role, TextEmbedder, TruncationLog,
};
use crate::embedding::EmbeddingVector;
use crate::image::ImageRef;
use crate::prompt::Aspect;

pub const PLANTED_KEY: &str = "planted";

/// Vocabulary words tagged with the aspect the mock classifier assigns them.
pub const VOCABULARY: [(&str, Aspect); 64] = {
    use Aspect::{Content as C, Style as S};
    [
        ("cat", C), ("dog", C), ("fox", C), ("bird", C), ("horse", C), ("fish", C),
        ("owl", C), ("tiger", C), ("bow", C), ("tie", C), ("hat", C), ("boat", C),
        ("tent", C), ("tree", C), ("flower", C), ("mountain", C), ("river", C), ("lake", C),
        ("ocean", C), ("sky", C), ("cloud", C), ("moon", C), ("sun", C), ("star", C),
        ("castle", C), ("house", C), ("city", C), ("bridge", C), ("road", C), ("forest", C),
        ("garden", C), ("beach", C), ("desert", C), ("car", C), ("train", C), ("girl", C),
        ("boy", C), ("robot", C), ("dragon", C), ("book", C),
        ("blue", S), ("red", S), ("green", S), ("yellow", S), ("purple", S), ("orange", S),
        ("black", S), ("white", S), ("golden", S), ("watercolor", S), ("oil", S), ("ink", S),
        ("sketch", S), ("pastel", S), ("neon", S), ("vintage", S), ("surreal", S),
        ("minimalist", S), ("cinematic", S), ("glossy", S), ("dreamy", S), ("gothic", S),
        ("pixel", S), ("impressionist", S),
    ]
};

/// Vocabulary size plus the out-of-vocabulary axis.
pub const DIMENSION: usize = VOCABULARY.len() + 1;

pub const STYLE_SENTENCE: &str = "A flat synthetic rendering with even lighting.";
pub const EMPTY_CAPTION: &str = "an image";
pub const CANNED_REPLY: &str = "ok";
pub const NO_DIFFERENCES: &str = "no differences";

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9]+").unwrap());
static MISSING_CLAUSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Image 1 (?:shows|mentions) ([^.]+?) which Image 2 lacks").unwrap());
static DESCRIPTIONS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"The descriptions of Image 1: ([^\n]*)\nThe descriptions of Image 2: ([^\n]*)").unwrap()
});

pub fn vocab_index(word: &str) -> Option<usize> {
    VOCABULARY.iter().position(|(w, _)| *w == word)
}

pub fn word(index: usize) -> &'static str {
    VOCABULARY[index].0
}

fn tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    WORD.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// Vocabulary indices of the words in `text`.
pub fn words_in(text: &str) -> BTreeSet<usize> {
    tokens(text).iter().filter_map(|t| vocab_index(t)).collect()
}

fn join_words(set: &BTreeSet<usize>, sep: &str) -> String {
    set.iter().map(|&i| word(i)).collect::<Vec<_>>().join(sep)
}

/// Normalized indicator vector of a word set.
pub fn indicator(set: &BTreeSet<usize>) -> EmbeddingVector {
    let mut values = vec![0.0; DIMENSION];
    if set.is_empty() {
        values[VOCABULARY.len()] = 1.0;
    } else {
        for &i in set {
            values[i] = 1.0;
        }
    }
    EmbeddingVector::normalized(values).expect("indicator is nonzero")
}

fn pixel_hash(seed: u64, word_index: usize) -> [u8; 3] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((word_index as u64).to_le_bytes());
    let d = h.finalize();
    [d[0], d[1], d[2]]
}

/// Encodes a synthetic RGB PNG planted with the vocabulary words among `words`.
pub fn render_png<S: AsRef<str>>(words: &[S], width: u32, height: u32, seed: u64) -> Vec<u8> {
    let planted: BTreeSet<usize> = words.iter().flat_map(|w| words_in(w.as_ref())).collect();
    render_planted(&planted, width, height, seed)
}

fn render_planted(planted: &BTreeSet<usize>, width: u32, height: u32, seed: u64) -> Vec<u8> {
    let bands: Vec<[u8; 3]> = if planted.is_empty() {
        vec![[128, 128, 128]]
    } else {
        planted.iter().map(|&i| pixel_hash(0, i)).collect()
    };
    let mut data = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height {
        for x in 0..width {
            let band = bands[(x as usize * bands.len()) / width as usize];
            let noise = ((x as u64 * 31 + y as u64 * 17).wrapping_add(seed.wrapping_mul(7)) % 16) as u8;
            data.extend(band.iter().map(|c| c.wrapping_add(noise)));
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk(PLANTED_KEY.to_string(), join_words(planted, " "))
            .expect("latin-1 keyword");
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&data).expect("in-memory png data");
    }
    out
}

/// A mock image planted with `words`, seedless.
pub fn planted_image<S: AsRef<str>>(words: &[S], width: u32, height: u32) -> ImageRef {
    ImageRef::from_png(render_png(words, width, height, 0), None).expect("valid png")
}

/// Reads the planted word set of a mock image. PNGs without the chunk plant nothing.
pub fn read_planted(bytes: &[u8]) -> Result<BTreeSet<usize>, String> {
    let reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| e.to_string())?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == PLANTED_KEY)
        .map(|c| words_in(&c.text))
        .unwrap_or_default())
}

fn planted_of(role: Role, image: &ImageRef) -> ProviderResult<BTreeSet<usize>> {
    let bytes = image.bytes().map_err(|e| ProviderError::Backend {
        role,
        status: 400,
        body: e.to_string(),
    })?;
    read_planted(&bytes).map_err(|e| ProviderError::Backend {
        role,
        status: 422,
        body: format!("undecodable image: {e}"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockOptions {
    /// Images accepted per chat call.
    pub max_images: usize,
    /// Cap on candidates the mock language model emits per reply.
    pub candidate_limit: Option<usize>,
    /// Extra off-target vocabulary words appended to every candidate list.
    pub distractors: usize,
    /// Word tokens the mock text encoder reads before truncating.
    pub token_limit: usize,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            max_images: 2,
            candidate_limit: None,
            distractors: 0,
            token_limit: super::DEFAULT_TEXT_WINDOW,
        }
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    pub options: MockOptions,
    truncations: Arc<TruncationLog>,
}

impl MockBackend {
    pub fn new(options: MockOptions) -> Self {
        Self {
            options,
            truncations: Arc::default(),
        }
    }

    pub fn single_image() -> Self {
        Self::new(MockOptions {
            max_images: 1,
            ..MockOptions::default()
        })
    }

    fn vanilla_difference(&self, reference: &BTreeSet<usize>, generated: &BTreeSet<usize>) -> String {
        let missing: BTreeSet<usize> = reference.difference(generated).copied().collect();
        let extra: BTreeSet<usize> = generated.difference(reference).copied().collect();
        if missing.is_empty() && extra.is_empty() {
            return "There is no planted-word difference between Image 1 and Image 2.".into();
        }
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("Image 1 shows {} which Image 2 lacks.", join_words(&missing, ", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("Image 2 shows {} which Image 1 lacks.", join_words(&extra, ", ")));
        }
        parts.join(" ")
    }

    fn description_difference(&self, first: &str, second: &str) -> String {
        let a = words_in(first);
        let b = words_in(second);
        let missing: BTreeSet<usize> = a.difference(&b).copied().collect();
        let extra: BTreeSet<usize> = b.difference(&a).copied().collect();
        if missing.is_empty() && extra.is_empty() {
            return NO_DIFFERENCES.into();
        }
        let mut lines = Vec::new();
        if !missing.is_empty() {
            lines.push(format!("Image 1 mentions {} which Image 2 lacks.", join_words(&missing, ", ")));
        }
        if !extra.is_empty() {
            lines.push(format!("Image 2 mentions {} which Image 1 lacks.", join_words(&extra, ", ")));
        }
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn candidates(&self, text: &str) -> String {
        let mut picked: Vec<usize> = Vec::new();
        for cap in MISSING_CLAUSE.captures_iter(text) {
            for i in tokens(&cap[1]).iter().filter_map(|t| vocab_index(t)) {
                if !picked.contains(&i) {
                    picked.push(i);
                }
            }
        }
        if let Some(limit) = self.options.candidate_limit {
            picked.truncate(limit);
        }
        if self.options.distractors > 0 {
            let digest = Sha256::digest(text.as_bytes());
            let mut added = 0;
            for b in digest.iter().cycle().take(256) {
                if added == self.options.distractors {
                    break;
                }
                let i = *b as usize % VOCABULARY.len();
                if !picked.contains(&i) && !words_in(text).contains(&i) {
                    picked.push(i);
                    added += 1;
                }
            }
        }
        let quoted: Vec<String> = picked.iter().map(|&i| format!("'{}'", word(i))).collect();
        format!("[{}]", quoted.join(", "))
    }

    fn classify(&self, text: &str) -> String {
        let tags: Vec<&str> = text
            .split_once("Tags:")
            .map(|(_, rest)| rest)
            .unwrap_or("")
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .collect();
        let mut content = Vec::new();
        let mut style = Vec::new();
        for tag in tags {
            let words = words_in(tag);
            let has = |a: Aspect| words.iter().any(|&i| VOCABULARY[i].1 == a);
            if !has(Aspect::Content) && has(Aspect::Style) {
                style.push(tag);
            } else {
                content.push(tag);
            }
        }
        serde_json::json!({ "content": content, "style": style }).to_string()
    }
}

impl Captioner for MockBackend {
    fn caption(&self, image: &ImageRef) -> ProviderResult<String> {
        let planted = planted_of(Role::Caption, image)?;
        if planted.is_empty() {
            return Ok(EMPTY_CAPTION.into());
        }
        Ok(join_words(&planted, " "))
    }
}

impl ImageGenerator for MockBackend {
    fn generate_image(&self, req: &GenerationRequest) -> ProviderResult<ImageRef> {
        req.validate()?;
        let planted = words_in(&req.prompt_text);
        let png = render_planted(&planted, req.width, req.height, req.seed);
        ImageRef::from_png(png, Some(req.seed)).map_err(|e| ProviderError::Backend {
            role: Role::TextToImage,
            status: 500,
            body: e.to_string(),
        })
    }
}

impl ChatModel for MockBackend {
    fn chat(&self, turns: &[ChatTurn]) -> ProviderResult<String> {
        check_turns(Role::Vlm, turns, self.options.max_images)?;
        let last = turns.last().expect("checked non-empty");
        let images: Vec<&ImageRef> = turns.iter().flat_map(|t| &t.images).collect();
        let text = last.text.as_str();
        match images.len() {
            2 => {
                let reference = planted_of(Role::Vlm, images[0])?;
                let generated = planted_of(Role::Vlm, images[1])?;
                Ok(self.vanilla_difference(&reference, &generated))
            }
            1 => {
                let planted = planted_of(Role::Vlm, images[0])?;
                if text.contains("style of the image") {
                    Ok(STYLE_SENTENCE.into())
                } else {
                    Ok(join_words(&planted, " "))
                }
            }
            _ => {
                if text.contains("python list") {
                    Ok(self.candidates(text))
                } else if let Some(c) = DESCRIPTIONS.captures(text) {
                    Ok(self.description_difference(&c[1], &c[2]))
                } else if text.contains("Tags:") && text.contains("JSON") {
                    Ok(self.classify(text))
                } else {
                    Ok(CANNED_REPLY.into())
                }
            }
        }
    }

    fn max_images(&self) -> usize {
        self.options.max_images
    }
}

impl TextEmbedder for MockBackend {
    fn embed_text(&self, text: &str) -> ProviderResult<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(ProviderError::Precondition("empty text".into()));
        }
        let mut toks = tokens(text);
        if toks.len() > self.options.token_limit {
            self.truncations.record(format!(
                "text of {} tokens truncated to {}",
                toks.len(),
                self.options.token_limit
            ));
            toks.truncate(self.options.token_limit);
        }
        let set = toks.iter().filter_map(|t| vocab_index(t)).collect();
        Ok(indicator(&set))
    }

    fn dimension(&self) -> usize {
        DIMENSION
    }

    fn truncation_warnings(&self) -> Vec<String> {
        self.truncations.snapshot()
    }
}

impl ImageEmbedder for MockBackend {
    fn embed_image(&self, image: &ImageRef) -> ProviderResult<EmbeddingVector> {
        Ok(indicator(&planted_of(Role::ImageEmbedding, image)?))
    }

    fn dimension(&self) -> usize {
        DIMENSION
    }
}
