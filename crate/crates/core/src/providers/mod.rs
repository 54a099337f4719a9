//! Backend roles and their clients.
//!
//! Every external model sits behind one of the traits below. [`http`] holds the JSON-over-HTTP
//! clients and [`mock`] a deterministic offline backend whose images carry a planted word set.

pub mod http;
pub mod mock;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::image::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Caption,
    TextToImage,
    Vlm,
    Llm,
    TextEmbedding,
    ImageEmbedding,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Caption => "caption",
            Role::TextToImage => "text_to_image",
            Role::Vlm => "vlm",
            Role::Llm => "llm",
            Role::TextEmbedding => "text_embedding",
            Role::ImageEmbedding => "image_embedding",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("{role} backend unreachable: {detail}")]
    Unreachable { role: Role, detail: String },

    #[error("{role} backend returned {status}: {body}")]
    Backend { role: Role, status: u16, body: String },

    #[error("{role} backend timed out")]
    Timeout { role: Role },

    #[error("{role} backend accepts {supported} image(s) per call, got {requested}")]
    UnsupportedMultiImage {
        role: Role,
        supported: usize,
        requested: usize,
    },

    #[error("invalid image size {width}x{height}")]
    InvalidSize { width: u32, height: u32 },

    #[error("dimension mismatch: text embeddings are {text}, image embeddings are {image}")]
    DimensionMismatch { text: usize, image: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl ProviderError {
    /// Errors worth retrying: connection failures, timeouts, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Unreachable { .. } | ProviderError::Timeout { .. } => true,
            ProviderError::Backend { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn role(&self) -> Option<Role> {
        match self {
            ProviderError::Unreachable { role, .. }
            | ProviderError::Backend { role, .. }
            | ProviderError::Timeout { role }
            | ProviderError::UnsupportedMultiImage { role, .. } => Some(*role),
            _ => None,
        }
    }
}

pub type ProviderResult<T> = std::result::Result<T, ProviderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One message of a chat exchange. Text or images must be non-empty.
#[derive(Debug, Clone)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
    pub images: Vec<ImageRef>,
}

impl ChatTurn {
    pub fn new(role: ChatRole, text: impl Into<String>, images: Vec<ImageRef>) -> ProviderResult<Self> {
        let text = text.into();
        if text.trim().is_empty() && images.is_empty() {
            return Err(ProviderError::Precondition(
                "chat turn needs text or images".into(),
            ));
        }
        Ok(Self { role, text, images })
    }

    pub fn user(text: impl Into<String>) -> ProviderResult<Self> {
        Self::new(ChatRole::User, text, Vec::new())
    }

    pub fn user_with_images(text: impl Into<String>, images: Vec<ImageRef>) -> ProviderResult<Self> {
        Self::new(ChatRole::User, text, images)
    }
}

/// Validates a turn list against a per-call image budget.
pub fn check_turns(role: Role, turns: &[ChatTurn], max_images: usize) -> ProviderResult<()> {
    if turns.is_empty() {
        return Err(ProviderError::Precondition("chat needs at least one turn".into()));
    }
    let requested: usize = turns.iter().map(|t| t.images.len()).sum();
    if requested > max_images {
        return Err(ProviderError::UnsupportedMultiImage {
            role,
            supported: max_images,
            requested,
        });
    }
    Ok(())
}

pub const MAX_IMAGE_SIDE: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
}

impl GenerationRequest {
    pub fn new(prompt_text: impl Into<String>, seed: u64, width: u32, height: u32) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            seed,
            width,
            height,
            steps: None,
        }
    }

    pub fn validate(&self) -> ProviderResult<()> {
        if self.prompt_text.trim().is_empty() {
            return Err(ProviderError::Precondition("empty generation prompt".into()));
        }
        if self.width == 0 || self.height == 0 || self.width > MAX_IMAGE_SIDE || self.height > MAX_IMAGE_SIDE {
            return Err(ProviderError::InvalidSize {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &ImageRef) -> ProviderResult<String>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate_image(&self, req: &GenerationRequest) -> ProviderResult<ImageRef>;
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, turns: &[ChatTurn]) -> ProviderResult<String>;

    /// Images accepted per call. Below 2 the vanilla framework is unavailable.
    fn max_images(&self) -> usize;
}

pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> ProviderResult<EmbeddingVector>;
    fn dimension(&self) -> usize;

    /// Warnings for inputs the backend truncated.
    fn truncation_warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

pub trait ImageEmbedder: Send + Sync {
    fn embed_image(&self, image: &ImageRef) -> ProviderResult<EmbeddingVector>;
    fn dimension(&self) -> usize;
}

/// The set of backends one optimization run talks to.
#[derive(Clone)]
pub struct Backends {
    pub caption: Arc<dyn Captioner>,
    pub image_gen: Arc<dyn ImageGenerator>,
    pub vlm: Arc<dyn ChatModel>,
    pub llm: Arc<dyn ChatModel>,
    pub text_embed: Arc<dyn TextEmbedder>,
    pub image_embed: Arc<dyn ImageEmbedder>,
}

impl Backends {
    /// Checks that the text and image embedders share a dimension.
    pub fn new(
        caption: Arc<dyn Captioner>,
        image_gen: Arc<dyn ImageGenerator>,
        vlm: Arc<dyn ChatModel>,
        llm: Arc<dyn ChatModel>,
        text_embed: Arc<dyn TextEmbedder>,
        image_embed: Arc<dyn ImageEmbedder>,
    ) -> ProviderResult<Self> {
        if text_embed.dimension() != image_embed.dimension() {
            return Err(ProviderError::DimensionMismatch {
                text: text_embed.dimension(),
                image: image_embed.dimension(),
            });
        }
        Ok(Self {
            caption,
            image_gen,
            vlm,
            llm,
            text_embed,
            image_embed,
        })
    }

    /// Every role served by one mock backend.
    pub fn mock(backend: mock::MockBackend) -> Self {
        let b = Arc::new(backend);
        Self::new(b.clone(), b.clone(), b.clone(), b.clone(), b.clone(), b).unwrap()
    }
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]").unwrap());

/// Rough text-encoder token count: words and punctuation marks plus start/end tokens.
pub fn estimate_tokens(text: &str) -> usize {
    TOKEN.find_iter(text).count() + 2
}

/// Token window of CLIP-style text encoders.
pub const DEFAULT_TEXT_WINDOW: usize = 77;

/// Collects truncation warnings from an embedder.
#[derive(Debug, Default)]
pub struct TruncationLog {
    entries: Mutex<Vec<String>>,
}

impl TruncationLog {
    pub fn record(&self, warning: String) {
        log::warn!("{warning}");
        self.entries.lock().unwrap().push(warning);
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.entries.lock().unwrap().clone()
    }
}
