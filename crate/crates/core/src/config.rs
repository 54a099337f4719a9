//! Application config: one YAML or JSON document with `providers`, `run`, `evaluation`,
//! `templates`, `cache` and `service` sections.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Extractor};
use crate::optimizer::RunConfig;
use crate::providers::http::{
    HttpCaptioner, HttpChat, HttpImageEmbedder, HttpImageGenerator, HttpTextEmbedder, ProviderProfile, Transport,
    DEFAULT_BACKOFF_MS, DEFAULT_MAX_RETRIES, DEFAULT_TIMEOUT_SECS,
};
use crate::providers::mock::{MockBackend, MockOptions};
use crate::providers::{
    Backends, Captioner, ChatModel, ImageEmbedder, ImageGenerator, ProviderError, Role, TextEmbedder,
    DEFAULT_TEXT_WINDOW,
};
use crate::scoring::{EmbeddingCache, DEFAULT_CACHE_CAPACITY};
use crate::template::TemplateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_backoff")]
    pub backoff_initial_ms: u64,
    #[serde(default)]
    pub max_images: Option<usize>,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default = "default_window")]
    pub token_limit: usize,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_backoff() -> u64 {
    DEFAULT_BACKOFF_MS
}
fn default_window() -> usize {
    DEFAULT_TEXT_WINDOW
}

impl HttpSpec {
    pub fn profile(&self, role: Role) -> ProviderProfile {
        let mut p = ProviderProfile::new(role, &self.endpoint, &self.model_name);
        p.auth = self.auth.clone();
        p.timeout_secs = self.timeout_secs;
        p.max_retries = self.max_retries;
        p.temperature = self.temperature;
        p.backoff_initial_ms = self.backoff_initial_ms;
        if let Some(n) = self.max_images {
            p.max_images = n;
        }
        p.dimension = self.dimension;
        p.token_limit = self.token_limit;
        p
    }
}

/// Backend for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Mock(MockOptions),
    Http(HttpSpec),
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Mock(MockOptions::default())
    }
}

impl ProviderSpec {
    pub fn label(&self) -> String {
        match self {
            ProviderSpec::Mock(_) => "mock".into(),
            ProviderSpec::Http(h) => format!("{} @ {}", h.model_name, h.endpoint),
        }
    }

    fn transport(&self, role: Role, key: &str) -> Result<Transport> {
        let ProviderSpec::Http(h) = self else {
            unreachable!("transport requested for a mock provider")
        };
        if matches!(role, Role::TextEmbedding | Role::ImageEmbedding) && h.dimension.is_none() {
            return Err(config_err(format!("{key}.dimension"), "required for embedding backends"));
        }
        Transport::new(h.profile(role)).map_err(|d| config_err(key, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    pub name: String,
    pub provider: ProviderSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub caption: ProviderSpec,
    pub text_to_image: ProviderSpec,
    pub vlm: ProviderSpec,
    pub llm: ProviderSpec,
    pub text_embedding: ProviderSpec,
    pub image_embedding: ProviderSpec,
    /// Image-fidelity extractors in report column order. Empty means a single CLIP-I extractor
    /// backed by `image_embedding`.
    pub extractors: Vec<ExtractorSpec>,
    /// Text-to-image backend used to recreate images during evaluation, when it differs from
    /// the one used during optimization.
    pub evaluation_text_to_image: Option<ProviderSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity: usize,
    /// JSONL file loaded at startup and written back on exit.
    pub path: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CACHE_CAPACITY,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub max_concurrent_runs: usize,
    /// Run store root; defaults to `runs` under the output directory.
    pub store_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_concurrent_runs: 2,
            store_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub providers: ProvidersConfig,
    pub run: RunConfig,
    pub evaluation: EvalConfig,
    /// Template name → text overrides.
    pub templates: BTreeMap<String, String>,
    pub cache: CacheConfig,
    pub service: ServiceConfig,
}

fn config_err(key: impl Into<String>, detail: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        detail: detail.to_string(),
    }
}

/// Everything a command needs, built from an [`AppConfig`].
#[derive(Clone)]
pub struct Runtime {
    pub backends: Backends,
    pub templates: Arc<TemplateSet>,
    pub cache: Arc<EmbeddingCache>,
    pub extractors: Vec<Extractor>,
    pub eval_generator: Arc<dyn ImageGenerator>,
    pub optimization_label: String,
    pub generation_label: String,
}

impl AppConfig {
    /// Parses YAML or JSON text. Errors name the offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let de = serde_yaml::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            config_err(if key == "." { "<root>".to_string() } else { key }, e.inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks values serde cannot, including the paired embedding dimensions.
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        TemplateSet::with_overrides(&self.templates).map_err(|e| config_err("templates", e))?;
        if self.evaluation.seeds.is_empty() {
            return Err(config_err("evaluation.seeds", "must not be empty"));
        }
        if self.service.max_concurrent_runs == 0 {
            return Err(config_err("service.max_concurrent_runs", "must be at least 1"));
        }
        let p = &self.providers;
        let named = [
            ("caption", Role::Caption, &p.caption),
            ("text_to_image", Role::TextToImage, &p.text_to_image),
            ("vlm", Role::Vlm, &p.vlm),
            ("llm", Role::Llm, &p.llm),
            ("text_embedding", Role::TextEmbedding, &p.text_embedding),
            ("image_embedding", Role::ImageEmbedding, &p.image_embedding),
        ];
        for (key, role, spec) in named {
            if let ProviderSpec::Http(h) = spec {
                h.profile(role)
                    .validate()
                    .map_err(|d| config_err(format!("providers.{key}"), d))?;
                if matches!(role, Role::TextEmbedding | Role::ImageEmbedding) && h.dimension.is_none() {
                    return Err(config_err(format!("providers.{key}.dimension"), "required for embedding backends"));
                }
            }
        }
        let dim = |spec: &ProviderSpec| match spec {
            ProviderSpec::Mock(_) => Some(crate::providers::mock::DIMENSION),
            ProviderSpec::Http(h) => h.dimension,
        };
        let (t, i) = (dim(&p.text_embedding), dim(&p.image_embedding));
        if t != i {
            return Err(config_err(
                "providers.image_embedding.dimension",
                ProviderError::DimensionMismatch {
                    text: t.unwrap_or(0),
                    image: i.unwrap_or(0),
                },
            ));
        }
        Ok(())
    }

    /// Instantiates every backend. HTTP clients are blocking, so call this outside async code.
    pub fn build(&self) -> Result<Runtime> {
        let p = &self.providers;
        let caption: Arc<dyn Captioner> = match &p.caption {
            ProviderSpec::Mock(o) => Arc::new(MockBackend::new(o.clone())),
            s => Arc::new(HttpCaptioner::new(s.transport(Role::Caption, "providers.caption")?)),
        };
        let image_gen = build_generator(&p.text_to_image, "providers.text_to_image")?;
        let chat = |spec: &ProviderSpec, role: Role, key: &str| -> Result<Arc<dyn ChatModel>> {
            Ok(match spec {
                ProviderSpec::Mock(o) => Arc::new(MockBackend::new(o.clone())),
                s => Arc::new(HttpChat::new(s.transport(role, key)?)),
            })
        };
        let vlm = chat(&p.vlm, Role::Vlm, "providers.vlm")?;
        let llm = chat(&p.llm, Role::Llm, "providers.llm")?;
        let text_embed: Arc<dyn TextEmbedder> = match &p.text_embedding {
            ProviderSpec::Mock(o) => Arc::new(MockBackend::new(o.clone())),
            s => Arc::new(HttpTextEmbedder::new(s.transport(Role::TextEmbedding, "providers.text_embedding")?)),
        };
        let image_embed = build_image_embedder(&p.image_embedding, "providers.image_embedding")?;
        let backends = Backends::new(caption, image_gen.clone(), vlm, llm, text_embed, image_embed.clone())
            .map_err(|e| config_err("providers.image_embedding", e))?;

        let extractors = if p.extractors.is_empty() {
            vec![Extractor::new("CLIP-I", image_embed)]
        } else {
            p.extractors
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let key = format!("providers.extractors[{i}].provider");
                    Ok(Extractor::new(&x.name, build_image_embedder(&x.provider, &key)?))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let (eval_generator, generation_label) = match &p.evaluation_text_to_image {
            Some(spec) => (
                build_generator(spec, "providers.evaluation_text_to_image")?,
                spec.label(),
            ),
            None => (image_gen, p.text_to_image.label()),
        };
        let cache = Arc::new(EmbeddingCache::new(self.cache.capacity.max(1)));
        if let Some(path) = &self.cache.path {
            if path.exists() {
                cache.load(path)?;
            }
        }
        Ok(Runtime {
            backends,
            templates: Arc::new(TemplateSet::with_overrides(&self.templates)?),
            cache,
            extractors,
            eval_generator,
            optimization_label: p.text_to_image.label(),
            generation_label,
        })
    }
}

fn build_generator(spec: &ProviderSpec, key: &str) -> Result<Arc<dyn ImageGenerator>> {
    Ok(match spec {
        ProviderSpec::Mock(o) => Arc::new(MockBackend::new(o.clone())),
        s => Arc::new(HttpImageGenerator::new(s.transport(Role::TextToImage, key)?)),
    })
}

fn build_image_embedder(spec: &ProviderSpec, key: &str) -> Result<Arc<dyn ImageEmbedder>> {
    Ok(match spec {
        ProviderSpec::Mock(o) => Arc::new(MockBackend::new(o.clone())),
        s => Arc::new(HttpImageEmbedder::new(s.transport(Role::ImageEmbedding, key)?)),
    })
}
