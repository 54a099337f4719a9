//! The optimization loop: initialize, then generate, compare and select until the prompt settles.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::prompt::{parse_tags_with_origin, Aspect, Fragment, Origin, TagPrompt};
use crate::promptgen::{route, Framework, FrameworkChoice, ImageDescription, PromptGenerator, DEFAULT_CANDIDATE_CAP};
use crate::providers::{Backends, GenerationRequest};
use crate::scoring::{ClipScorer, EmbeddingCache, ScoreValue};
use crate::selection::{select, Pick, SelectionMode};
use crate::template::TemplateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_iterations: usize,
    /// Consecutive unchanged iterations before stopping.
    pub early_stop_patience: usize,
    pub framework: FrameworkChoice,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub steps: Option<u32>,
    pub candidate_cap: usize,
    /// Hand-crafted starting prompt; skips captioning when set.
    pub initial_prompt: Option<String>,
    pub selection: SelectionMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            early_stop_patience: 2,
            framework: FrameworkChoice::Auto,
            seed: 0,
            width: 512,
            height: 512,
            steps: None,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            initial_prompt: None,
            selection: SelectionMode::Greedy,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: &str| {
            Err(Error::Config {
                key: format!("run.{key}"),
                detail: detail.into(),
            })
        };
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be at least 1");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience", "must be at least 1");
        }
        if self.candidate_cap == 0 {
            return bad("candidate_cap", "must be at least 1");
        }
        if let Err(e) = GenerationRequest::new("x", self.seed, self.width, self.height).validate() {
            return bad("width", &e.to_string());
        }
        if let Some(p) = &self.initial_prompt {
            if parse_tags_with_origin(p, Origin::Init).is_empty() {
                return bad("initial_prompt", "has no fragments");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    pub prompt_in: TagPrompt,
    /// Absent only when image generation itself failed.
    pub generated_image: Option<ImageRef>,
    pub differences: Vec<String>,
    pub difference_aspects: Vec<Option<Aspect>>,
    pub candidates: Vec<Fragment>,
    pub prompt_out: TagPrompt,
    pub score_in: ScoreValue,
    pub score_out: ScoreValue,
    pub picks: Vec<Pick>,
    pub fell_back: bool,
    /// Set when the candidate reply could not be parsed and the step ran with no candidates.
    pub parse_failure: Option<String>,
    /// Set when a backend failed and the run stopped at this step.
    pub error: Option<String>,
    pub token_estimate: usize,
    pub token_overflow: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub reference: ImageRef,
    pub framework: Framework,
    pub initial_prompt: TagPrompt,
    pub initial_score: ScoreValue,
    pub final_prompt: TagPrompt,
    pub iterations: Vec<IterationRecord>,
    pub final_score: ScoreValue,
    pub stop_reason: StopReason,
    pub error: Option<String>,
}

impl RunResult {
    /// Scores after initialization and after each iteration.
    pub fn score_trace(&self) -> Vec<ScoreValue> {
        std::iter::once(self.initial_score)
            .chain(self.iterations.iter().map(|r| r.score_out))
            .collect()
    }
}

/// Receives run progress as it happens.
pub trait RunSink {
    fn started(&mut self, _run_id: &str, _config: &RunConfig, _reference: &ImageRef) -> Result<()> {
        Ok(())
    }

    /// `image` carries the generated bytes when generation succeeded.
    fn iteration(&mut self, _record: &IterationRecord, _image: Option<&ImageRef>) -> Result<()> {
        Ok(())
    }

    fn finished(&mut self, _result: &RunResult) -> Result<()> {
        Ok(())
    }
}

impl RunSink for () {}

impl RunSink for Vec<IterationRecord> {
    fn iteration(&mut self, record: &IterationRecord, _image: Option<&ImageRef>) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

pub struct Optimizer {
    backends: Backends,
    scorer: ClipScorer,
    generator: PromptGenerator,
    config: RunConfig,
}

/// Outcome of one step: the record plus the generated image, if any.
pub struct StepOutput {
    pub record: IterationRecord,
    pub image: Option<ImageRef>,
}

struct StepState<'a> {
    framework: Framework,
    reference_desc: &'a mut Option<ImageDescription>,
}

impl Optimizer {
    pub fn new(backends: Backends, templates: Arc<TemplateSet>, cache: Arc<EmbeddingCache>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let scorer = ClipScorer::new(backends.text_embed.clone(), backends.image_embed.clone(), cache);
        let generator = PromptGenerator::new(backends.vlm.clone(), backends.llm.clone(), templates)
            .with_candidate_cap(config.candidate_cap);
        Ok(Self {
            backends,
            scorer,
            generator,
            config,
        })
    }

    pub fn with_text_window(mut self, tokens: usize) -> Self {
        self.scorer = self.scorer.with_text_window(tokens);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn scorer(&self) -> &ClipScorer {
        &self.scorer
    }

    pub fn framework(&self) -> Framework {
        route(self.config.framework, self.generator.vlm_max_images())
    }

    /// The configured hand-crafted prompt, or the reference caption.
    pub fn initialize(&self, reference: &ImageRef) -> Result<TagPrompt> {
        let prompt = match &self.config.initial_prompt {
            Some(text) => parse_tags_with_origin(text, Origin::Init),
            None => parse_tags_with_origin(&self.backends.caption.caption(reference)?, Origin::Init),
        };
        if prompt.is_empty() {
            return Err(Error::Precondition("initial prompt is empty".into()));
        }
        Ok(prompt)
    }

    /// One generate/compare/select iteration.
    pub fn step(&self, step: usize, current: &TagPrompt, reference: &ImageRef) -> Result<StepOutput> {
        let mut desc = None;
        let mut state = StepState {
            framework: self.framework(),
            reference_desc: &mut desc,
        };
        let score_in = self.scorer.clip_sim(reference, current)?;
        self.step_inner(step, current, score_in, reference, &mut state)
    }

    fn step_inner(
        &self,
        step: usize,
        current: &TagPrompt,
        score_in: ScoreValue,
        reference: &ImageRef,
        state: &mut StepState<'_>,
    ) -> Result<StepOutput> {
        let start = Instant::now();
        let mut record = IterationRecord {
            step,
            prompt_in: current.clone(),
            generated_image: None,
            differences: Vec::new(),
            difference_aspects: Vec::new(),
            candidates: Vec::new(),
            prompt_out: current.clone(),
            score_in,
            score_out: score_in,
            picks: Vec::new(),
            fell_back: true,
            parse_failure: None,
            error: None,
            token_estimate: 0,
            token_overflow: false,
            wall_time: 0.0,
        };
        let (tokens, overflow) = self.scorer.token_estimate(current);
        record.token_estimate = tokens;
        record.token_overflow = overflow;

        let mut image = None;
        let outcome = self.fill_step(&mut record, &mut image, reference, state);
        record.wall_time = start.elapsed().as_secs_f64();
        if let Err(e) = outcome {
            record.error = Some(e.to_string());
        }
        Ok(StepOutput { record, image })
    }

    fn fill_step(
        &self,
        record: &mut IterationRecord,
        image_out: &mut Option<ImageRef>,
        reference: &ImageRef,
        state: &mut StepState<'_>,
    ) -> Result<()> {
        let cfg = &self.config;
        let current = record.prompt_in.clone();
        let mut req = GenerationRequest::new(current.render(), cfg.seed, cfg.width, cfg.height);
        req.steps = cfg.steps;
        let generated = self.backends.image_gen.generate_image(&req)?;
        record.generated_image = Some(generated.clone());
        *image_out = Some(generated.clone());

        if state.framework == Framework::Enhanced && state.reference_desc.is_none() {
            *state.reference_desc = Some(self.generator.enhanced_describe(reference)?);
        }
        let diffs = self
            .generator
            .differences(state.framework, reference, state.reference_desc.as_ref(), &generated)?;
        record.differences = diffs.blocks.clone();
        record.difference_aspects = diffs.aspect_tags.clone();

        let candidates = match self.generator.generate_candidates(&diffs, &current) {
            Ok(c) => c,
            Err(Error::ParseFailure(detail)) => {
                log::info!("step {}: candidate reply unparseable, continuing without candidates", record.step);
                record.parse_failure = Some(detail);
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        record.candidates = candidates.clone();

        let outcome = select(cfg.selection, &current, &candidates, reference, &self.scorer)?;
        record.picks = outcome.picks;
        record.fell_back = outcome.fell_back;
        if let Some(score) = outcome.final_score {
            record.prompt_out = outcome.selected;
            record.score_out = score;
        }
        let (tokens, overflow) = self.scorer.token_estimate(&record.prompt_out);
        record.token_estimate = tokens;
        record.token_overflow = overflow;
        Ok(())
    }

    /// Runs to completion, reporting each step to `sink` as it finishes.
    pub fn run(&self, reference: &ImageRef, sink: &mut dyn RunSink) -> Result<RunResult> {
        self.run_with_id(&uuid::Uuid::new_v4().to_string(), reference, sink)
    }

    pub fn run_with_id(&self, run_id: &str, reference: &ImageRef, sink: &mut dyn RunSink) -> Result<RunResult> {
        sink.started(run_id, &self.config, reference)?;
        let initial = self.initialize(reference)?;
        let initial_score = self.scorer.clip_sim(reference, &initial)?;
        let framework = self.framework();
        let mut reference_desc = None;
        let mut state = StepState {
            framework,
            reference_desc: &mut reference_desc,
        };

        let mut current = initial.clone();
        let mut score = initial_score;
        let mut iterations = Vec::new();
        let mut unchanged = 0;
        let mut stop_reason = StopReason::MaxIterations;
        let mut error = None;

        for step in 0..self.config.max_iterations {
            let out = self.step_inner(step, &current, score, reference, &mut state)?;
            sink.iteration(&out.record, out.image.as_ref())?;
            let record = out.record;
            if record.prompt_out.same_texts(&current) {
                unchanged += 1;
            } else {
                unchanged = 0;
            }
            current = record.prompt_out.clone();
            score = record.score_out;
            let failed = record.error.clone();
            iterations.push(record);
            if let Some(e) = failed {
                log::error!("run {run_id} stopped at step {step}: {e}");
                stop_reason = StopReason::Error;
                error = Some(e);
                break;
            }
            if unchanged >= self.config.early_stop_patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }

        let result = RunResult {
            run_id: run_id.to_string(),
            reference: reference.clone(),
            framework,
            initial_prompt: initial,
            initial_score,
            final_prompt: current,
            iterations,
            final_score: score,
            stop_reason,
            error,
        };
        sink.finished(&result)?;
        Ok(result)
    }
}
