//! JSON-over-HTTP clients.
//!
//! Chat-capable roles (and captioning) speak the OpenAI-compatible chat-completions contract with
//! base64 `data:` URLs for images. Image generation posts `{prompt, seed, width, height, steps}` and
//! expects a base64 PNG back. Embedding posts `{input}` (text, or a base64 PNG) and expects
//! `{embedding: [..]}`.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_turns, estimate_tokens, Captioner, ChatModel, ChatRole, ChatTurn, GenerationRequest,
    ImageEmbedder, ImageGenerator, ProviderError, ProviderResult, Role, TextEmbedder,
    TruncationLog,
};
use crate::embedding::EmbeddingVector;
use crate::image::ImageRef;

pub const DEFAULT_TIMEOUT_SECS: f64 = 120.0;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 1000;

const CAPTION_INSTRUCTION: &str = "Write a short one-sentence caption for this image.";

/// Connection settings for one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub role: Role,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding a bearer token.
    pub auth: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: Option<f64>,
    pub backoff_initial_ms: u64,
    /// Images accepted per chat call (vlm only).
    pub max_images: usize,
    /// Embedding dimension (embedding roles only).
    pub dimension: Option<usize>,
    /// Text-encoder window used for truncation warnings.
    pub token_limit: usize,
}

impl ProviderProfile {
    pub fn new(role: Role, endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            role,
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            auth: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            temperature: None,
            backoff_initial_ms: DEFAULT_BACKOFF_MS,
            max_images: if role == Role::Vlm { 2 } else { 1 },
            dimension: None,
            token_limit: super::DEFAULT_TEXT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err("timeout must be positive".into());
        }
        if self.endpoint.trim().is_empty() {
            return Err("endpoint is required".into());
        }
        if let Some(t) = self.temperature {
            if !matches!(self.role, Role::Llm | Role::Vlm | Role::Caption) {
                return Err(format!("temperature is not used by the {} role", self.role));
            }
            if !(0.0..=2.0).contains(&t) {
                return Err("temperature must lie in [0, 2]".into());
            }
        }
        if self.dimension == Some(0) {
            return Err("dimension must be positive".into());
        }
        Ok(())
    }
}

/// Shared POST-with-retries transport.
#[derive(Debug, Clone)]
pub struct Transport {
    profile: Arc<ProviderProfile>,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl Transport {
    /// Builds the client. The bearer token is read from the environment variable named by
    /// `profile.auth`.
    pub fn new(profile: ProviderProfile) -> Result<Self, String> {
        profile.validate()?;
        let token = match &profile.auth {
            Some(var) => Some(
                std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(profile.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            profile: Arc::new(profile),
            client,
            token,
        })
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    fn role(&self) -> Role {
        self.profile.role
    }

    fn attempt(&self, body: &Value) -> ProviderResult<Value> {
        let mut req = self.client.post(&self.profile.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| self.classify(e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| self.classify(e))?;
        if !status.is_success() {
            return Err(ProviderError::Backend {
                role: self.role(),
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Backend {
            role: self.role(),
            status: status.as_u16(),
            body: format!("invalid JSON ({e}): {text}"),
        })
    }

    fn classify(&self, e: reqwest::Error) -> ProviderError {
        if e.is_timeout() {
            ProviderError::Timeout { role: self.role() }
        } else {
            ProviderError::Unreachable {
                role: self.role(),
                detail: e.to_string(),
            }
        }
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    pub fn post_json(&self, body: &Value) -> ProviderResult<Value> {
        let mut delay = Duration::from_millis(self.profile.backoff_initial_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.profile.max_retries => {
                    log::warn!(
                        "{} call failed ({e}); retry {}/{} in {:?}",
                        self.role(),
                        attempt + 1,
                        self.profile.max_retries,
                        delay
                    );
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn malformed(&self, what: &str, body: &Value) -> ProviderError {
        ProviderError::Backend {
            role: self.role(),
            status: 200,
            body: format!("missing {what} in response: {body}"),
        }
    }
}

fn data_url(image: &ImageRef, role: Role) -> ProviderResult<String> {
    let bytes = image.bytes().map_err(|e| ProviderError::Precondition(format!("{role}: {e}")))?;
    Ok(format!("data:image/png;base64,{}", BASE64.encode(bytes)))
}

/// Builds the chat-completions `messages` array.
pub fn chat_messages(turns: &[ChatTurn], role: Role) -> ProviderResult<Value> {
    let mut messages = Vec::with_capacity(turns.len());
    for turn in turns {
        let role_tag = match turn.role {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        };
        let content = if turn.images.is_empty() {
            Value::String(turn.text.clone())
        } else {
            let mut parts = Vec::new();
            if !turn.text.is_empty() {
                parts.push(json!({ "type": "text", "text": turn.text }));
            }
            for image in &turn.images {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": { "url": data_url(image, role)? }
                }));
            }
            Value::Array(parts)
        };
        messages.push(json!({ "role": role_tag, "content": content }));
    }
    Ok(Value::Array(messages))
}

/// OpenAI-compatible chat completions client for the vlm and llm roles.
#[derive(Debug, Clone)]
pub struct HttpChat {
    transport: Transport,
}

impl HttpChat {
    pub fn new(transport: Transport) -> Self {
        Self { transport }
    }
}

impl ChatModel for HttpChat {
    fn chat(&self, turns: &[ChatTurn]) -> ProviderResult<String> {
        let profile = self.transport.profile();
        check_turns(profile.role, turns, profile.max_images)?;
        let body = json!({
            "model": profile.model_name,
            "messages": chat_messages(turns, profile.role)?,
            "temperature": profile.temperature.unwrap_or(0.0),
        });
        let reply = self.transport.post_json(&body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.transport.malformed("choices[0].message.content", &reply))
    }

    fn max_images(&self) -> usize {
        self.transport.profile().max_images
    }
}

/// Captioning through the chat contract with a single image.
#[derive(Debug, Clone)]
pub struct HttpCaptioner {
    chat: HttpChat,
}

impl HttpCaptioner {
    pub fn new(transport: Transport) -> Self {
        Self {
            chat: HttpChat::new(transport),
        }
    }
}

impl Captioner for HttpCaptioner {
    fn caption(&self, image: &ImageRef) -> ProviderResult<String> {
        let turn = ChatTurn::user_with_images(CAPTION_INSTRUCTION, vec![image.clone()])?;
        let text = self.chat.chat(&[turn])?;
        Ok(text.lines().next().unwrap_or("").trim().to_string())
    }
}

#[derive(Debug, Clone)]
pub struct HttpImageGenerator {
    transport: Transport,
}

impl HttpImageGenerator {
    pub fn new(transport: Transport) -> Self {
        Self { transport }
    }
}

impl ImageGenerator for HttpImageGenerator {
    fn generate_image(&self, req: &GenerationRequest) -> ProviderResult<ImageRef> {
        req.validate()?;
        let mut body = json!({
            "model": self.transport.profile().model_name,
            "prompt": req.prompt_text,
            "seed": req.seed,
            "width": req.width,
            "height": req.height,
        });
        if let Some(steps) = req.steps {
            body["steps"] = json!(steps);
        }
        let reply = self.transport.post_json(&body)?;
        let encoded = reply["image"]
            .as_str()
            .or_else(|| reply["images"][0].as_str())
            .ok_or_else(|| self.transport.malformed("image", &reply))?;
        let bytes = BASE64.decode(encoded.trim()).map_err(|e| ProviderError::Backend {
            role: Role::TextToImage,
            status: 200,
            body: format!("image is not base64: {e}"),
        })?;
        ImageRef::from_png(bytes, Some(req.seed)).map_err(|e| ProviderError::Backend {
            role: Role::TextToImage,
            status: 200,
            body: e.to_string(),
        })
    }
}

fn parse_embedding(transport: &Transport, reply: &Value) -> ProviderResult<EmbeddingVector> {
    let raw = reply["embedding"]
        .as_array()
        .or_else(|| reply["data"][0]["embedding"].as_array())
        .ok_or_else(|| transport.malformed("embedding", reply))?;
    let values: Option<Vec<f64>> = raw.iter().map(Value::as_f64).collect();
    let values = values.ok_or_else(|| transport.malformed("numeric embedding", reply))?;
    if let Some(expected) = transport.profile().dimension {
        if values.len() != expected {
            return Err(ProviderError::Backend {
                role: transport.role(),
                status: 200,
                body: format!("embedding has {} values, profile declares {expected}", values.len()),
            });
        }
    }
    EmbeddingVector::normalized(values).map_err(|e| ProviderError::Backend {
        role: transport.role(),
        status: 200,
        body: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct HttpTextEmbedder {
    transport: Transport,
    truncations: Arc<TruncationLog>,
}

impl HttpTextEmbedder {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            truncations: Arc::default(),
        }
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn embed_text(&self, text: &str) -> ProviderResult<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(ProviderError::Precondition("empty text".into()));
        }
        let profile = self.transport.profile();
        let tokens = estimate_tokens(text);
        if tokens > profile.token_limit {
            self.truncations.record(format!(
                "text of ~{tokens} tokens exceeds the {}-token window of {}; backend truncates",
                profile.token_limit, profile.model_name
            ));
        }
        let reply = self
            .transport
            .post_json(&json!({ "model": profile.model_name, "input": text }))?;
        parse_embedding(&self.transport, &reply)
    }

    fn dimension(&self) -> usize {
        self.transport.profile().dimension.unwrap_or(0)
    }

    fn truncation_warnings(&self) -> Vec<String> {
        self.truncations.snapshot()
    }
}

#[derive(Debug, Clone)]
pub struct HttpImageEmbedder {
    transport: Transport,
}

impl HttpImageEmbedder {
    pub fn new(transport: Transport) -> Self {
        Self { transport }
    }
}

impl ImageEmbedder for HttpImageEmbedder {
    fn embed_image(&self, image: &ImageRef) -> ProviderResult<EmbeddingVector> {
        let bytes = image
            .bytes()
            .map_err(|e| ProviderError::Precondition(e.to_string()))?;
        let reply = self.transport.post_json(&json!({
            "model": self.transport.profile().model_name,
            "input": BASE64.encode(bytes),
        }))?;
        parse_embedding(&self.transport, &reply)
    }

    fn dimension(&self) -> usize {
        self.transport.profile().dimension.unwrap_or(0)
    }
}
