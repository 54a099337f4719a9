//! Prompt and image fidelity metrics over a dataset manifest.
//!
//! Prompt fidelity (CLIP-T) is the scorer's cosine between the prompt and the reference. Image
//! fidelity regenerates the image from the prompt under several seeds and compares reference and
//! recreation under each configured image extractor, reporting mean and population variance.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::optimizer::Optimizer;
use crate::prompt::{parse_tags_with_origin, Origin, TagPrompt};
use crate::providers::{Captioner, GenerationRequest, ImageEmbedder, ImageGenerator};
use crate::scoring::{cosine, ClipScorer, ScoreValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    AiGenerated,
    HumanCreated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub source: ImageSource,
    #[serde(default)]
    pub gold_prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks id uniqueness and that every image path exists.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
            }
            if !e.image.exists() {
                return Err(Error::Manifest(format!(
                    "entry {:?}: image {} does not exist",
                    e.id,
                    e.image.display()
                )));
            }
        }
        Ok(())
    }

    /// Reads a JSON manifest. Relative image paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        let mut manifest: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Manifest(format!("{}: {} at `{}`", path.display(), e.inner(), e.path()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut manifest.entries {
            if e.image.is_relative() {
                e.image = base.join(&e.image);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Mean and population variance on the ×100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub mean: f64,
    pub variance: f64,
}

impl SeedStats {
    pub fn from_raw(raw_cosines: &[f64]) -> Self {
        let reported: Vec<f64> = raw_cosines.iter().map(|c| ScoreValue::new(*c).reported()).collect();
        let n = reported.len() as f64;
        let mean = reported.iter().sum::<f64>() / n;
        let variance = reported.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, variance }
    }
}

/// An image feature extractor used for image fidelity, such as CLIP, DINO or ViT.
#[derive(Clone)]
pub struct Extractor {
    pub name: String,
    pub embedder: Arc<dyn ImageEmbedder>,
}

impl Extractor {
    pub fn new(name: impl Into<String>, embedder: Arc<dyn ImageEmbedder>) -> Self {
        Self {
            name: name.into(),
            embedder,
        }
    }
}

pub fn clip_t(scorer: &ClipScorer, prompt: &TagPrompt, reference: &ImageRef) -> Result<ScoreValue> {
    scorer.clip_sim(reference, prompt)
}

/// Size used when recreating images. `None` keeps the reference's size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecreateSize {
    pub width: u32,
    pub height: u32,
}

/// Recreates the image once per seed and compares it with the reference under every extractor.
pub fn image_fidelity(
    generator: &dyn ImageGenerator,
    prompt: &TagPrompt,
    reference: &ImageRef,
    seeds: &[u64],
    extractors: &[Extractor],
    size: Option<RecreateSize>,
) -> Result<BTreeMap<String, SeedStats>> {
    if seeds.is_empty() {
        return Err(Error::Precondition("image fidelity needs at least one seed".into()));
    }
    let size = size.unwrap_or(RecreateSize {
        width: reference.width,
        height: reference.height,
    });
    let mut per_extractor: Vec<Vec<f64>> = vec![Vec::new(); extractors.len()];
    let reference_vecs = extractors
        .iter()
        .map(|x| x.embedder.embed_image(reference))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for &seed in seeds {
        let req = GenerationRequest::new(prompt.render(), seed, size.width, size.height);
        let recreated = generator.generate_image(&req)?;
        for (i, x) in extractors.iter().enumerate() {
            let v = x.embedder.embed_image(&recreated)?;
            per_extractor[i].push(cosine(&reference_vecs[i], &v)?);
        }
    }
    Ok(extractors
        .iter()
        .zip(per_extractor)
        .map(|(x, raw)| (x.name.clone(), SeedStats::from_raw(&raw)))
        .collect())
}

/// Something that turns a reference image into a prompt.
pub trait PromptMethod: Send + Sync {
    fn name(&self) -> &str;
    fn prompt(&self, entry: &ManifestEntry, image: &ImageRef) -> Result<TagPrompt>;
}

/// Passes the entry's gold prompt through.
pub struct IdentityMethod;

impl PromptMethod for IdentityMethod {
    fn name(&self) -> &str {
        "identity"
    }

    fn prompt(&self, entry: &ManifestEntry, _image: &ImageRef) -> Result<TagPrompt> {
        let gold = entry
            .gold_prompt
            .as_deref()
            .ok_or_else(|| Error::Manifest(format!("entry {:?} has no gold prompt", entry.id)))?;
        let p = parse_tags_with_origin(gold, Origin::Init);
        if p.is_empty() {
            return Err(Error::Manifest(format!("entry {:?} has an empty gold prompt", entry.id)));
        }
        Ok(p)
    }
}

/// The caption alone, as used for initialization.
pub struct CaptionMethod(pub Arc<dyn Captioner>);

impl PromptMethod for CaptionMethod {
    fn name(&self) -> &str {
        "caption"
    }

    fn prompt(&self, _entry: &ManifestEntry, image: &ImageRef) -> Result<TagPrompt> {
        let p = parse_tags_with_origin(&self.0.caption(image)?, Origin::Init);
        if p.is_empty() {
            return Err(Error::Precondition("empty caption".into()));
        }
        Ok(p)
    }
}

/// The final prompt of a full optimization run.
pub struct ArpoMethod(pub Optimizer);

impl PromptMethod for ArpoMethod {
    fn name(&self) -> &str {
        "arpo"
    }

    fn prompt(&self, _entry: &ManifestEntry, image: &ImageRef) -> Result<TagPrompt> {
        let result = self.0.run_with_id("eval", image, &mut ())?;
        if let Some(e) = result.error {
            return Err(Error::Precondition(format!("run failed: {e}")));
        }
        Ok(result.final_prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    /// Recreation size; the reference's size when absent.
    pub size: Option<RecreateSize>,
    /// Entries evaluated concurrently.
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            size: None,
            parallelism: 1,
        }
    }
}

/// Backends used to evaluate. Prompts may come from one text-to-image profile and be
/// recreated with another; the labels name both in the report.
pub struct EvalContext {
    pub scorer: ClipScorer,
    pub generator: Arc<dyn ImageGenerator>,
    pub extractors: Vec<Extractor>,
    pub optimization_profile: String,
    pub generation_profile: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub source: ImageSource,
    pub prompt: String,
    pub clip_t: ScoreValue,
    pub image: BTreeMap<String, SeedStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub count: usize,
    /// Mean reported CLIP-T.
    pub clip_t: f64,
    /// Mean of per-image means and of per-image variances.
    pub image: BTreeMap<String, SeedStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub optimization_profile: String,
    pub generation_profile: String,
    pub seeds: Vec<u64>,
    pub variance_estimator: String,
    pub extractors: Vec<String>,
    pub per_image: BTreeMap<String, ImageMetrics>,
    pub aggregate: Option<AggregateMetrics>,
    pub skipped: Vec<SkippedEntry>,
}

fn eval_entry(
    entry: &ManifestEntry,
    method: &dyn PromptMethod,
    ctx: &EvalContext,
    cfg: &EvalConfig,
) -> Result<ImageMetrics> {
    let image = ImageRef::from_path(&entry.image)?;
    let prompt = method.prompt(entry, &image)?;
    let clip_t = clip_t(&ctx.scorer, &prompt, &image)?;
    let fidelity = image_fidelity(ctx.generator.as_ref(), &prompt, &image, &cfg.seeds, &ctx.extractors, cfg.size)?;
    Ok(ImageMetrics {
        source: entry.source,
        prompt: prompt.render(),
        clip_t,
        image: fidelity,
    })
}

/// Evaluates every entry. Failed entries are logged, listed as skipped and left out of the
/// aggregate.
pub fn eval_manifest(
    manifest: &DatasetManifest,
    method: &dyn PromptMethod,
    ctx: &EvalContext,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if manifest.entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config {
            key: "evaluation.seeds".into(),
            detail: "must not be empty".into(),
        });
    }
    let parallelism = cfg.parallelism.max(1);
    let mut results: Vec<Result<ImageMetrics>> = Vec::with_capacity(manifest.entries.len());
    for batch in manifest.entries.chunks(parallelism) {
        thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|entry| s.spawn(move || eval_entry(entry, method, ctx, cfg)))
                .collect();
            for h in handles {
                results.push(h.join().expect("evaluation thread panicked"));
            }
        });
    }

    let mut per_image = BTreeMap::new();
    let mut ok: Vec<&ImageMetrics> = Vec::new();
    let mut skipped = Vec::new();
    let mut kept = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(m) => kept.push((entry.id.clone(), m)),
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.id);
                skipped.push(SkippedEntry {
                    id: entry.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    for (_, m) in &kept {
        ok.push(m);
    }
    let aggregate = aggregate(&ok, &ctx.extractors);
    for (id, m) in kept {
        per_image.insert(id, m);
    }
    Ok(EvalReport {
        method: method.name().to_string(),
        optimization_profile: ctx.optimization_profile.clone(),
        generation_profile: ctx.generation_profile.clone(),
        seeds: cfg.seeds.clone(),
        variance_estimator: "population".into(),
        extractors: ctx.extractors.iter().map(|x| x.name.clone()).collect(),
        per_image,
        aggregate,
        skipped,
    })
}

fn aggregate(metrics: &[&ImageMetrics], extractors: &[Extractor]) -> Option<AggregateMetrics> {
    if metrics.is_empty() {
        return None;
    }
    let n = metrics.len() as f64;
    let clip_t = metrics.iter().map(|m| m.clip_t.reported()).sum::<f64>() / n;
    let image = extractors
        .iter()
        .map(|x| {
            let mean = metrics.iter().map(|m| m.image[&x.name].mean).sum::<f64>() / n;
            let variance = metrics.iter().map(|m| m.image[&x.name].variance).sum::<f64>() / n;
            (x.name.clone(), SeedStats { mean, variance })
        })
        .collect();
    Some(AggregateMetrics {
        count: metrics.len(),
        clip_t,
        image,
    })
}

impl EvalReport {
    /// Text table: CLIP-T, then each extractor as `mean ± variance`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method: {}", self.method);
        let _ = writeln!(out, "optimization profile: {}", self.optimization_profile);
        let _ = writeln!(out, "generation profile: {}", self.generation_profile);
        let _ = writeln!(
            out,
            "seeds: {:?} (± is {} variance over seeds)",
            self.seeds, self.variance_estimator
        );
        let mut header = vec!["id".to_string(), "CLIP-T".to_string()];
        header.extend(self.extractors.iter().cloned());
        let mut rows: Vec<Vec<String>> = vec![header];
        let cells = |clip_t: f64, image: &BTreeMap<String, SeedStats>| {
            let mut row = vec![format!("{clip_t:.2}")];
            for x in &self.extractors {
                let s = image[x];
                row.push(format!("{:.2} ± {:.2}", s.mean, s.variance));
            }
            row
        };
        for (id, m) in &self.per_image {
            let mut row = vec![id.clone()];
            row.extend(cells(m.clip_t.reported(), &m.image));
            rows.push(row);
        }
        if let Some(a) = &self.aggregate {
            let mut row = vec!["mean".to_string()];
            row.extend(cells(a.clip_t, &a.image));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        }
        let _ = writeln!(out, "skipped entries: {}", self.skipped.len());
        for s in &self.skipped {
            let _ = writeln!(out, "  {}: {}", s.id, s.reason);
        }
        out
    }

    /// Writes report.json and report.txt into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.render_table()).map_err(|e| Error::io(&txt, e))?;
        Ok(())
    }
}
