use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use revprompt_core::config::{AppConfig, Runtime};
use revprompt_core::editing::{self, ClassifiedPrompt, EXTERNAL_ORIGIN};
use revprompt_core::error::Error;
use revprompt_core::evaluation::{eval_manifest, ArpoMethod, CaptionMethod, DatasetManifest, EvalContext, IdentityMethod, PromptMethod};
use revprompt_core::image::ImageRef;
use revprompt_core::optimizer::{Optimizer, StopReason};
use revprompt_core::prompt::parse_tags;
use revprompt_core::providers::mock::render_png;
use revprompt_core::scoring::ClipScorer;
use revprompt_core::store::{RunDir, RunStore};
use revprompt_service::AppState;

#[derive(Parser)]
#[command(name = "revprompt", version, about = "Decode an image into an editable tag prompt")]
struct Cli {
    /// YAML or JSON config; all-mock defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Identity,
    Caption,
    Arpo,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a reverse prompt for one reference image.
    Run { image: PathBuf },
    /// Evaluate a prompt method over a dataset manifest.
    Eval {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "arpo")]
        method: Method,
    },
    /// Split a prompt into content and style tags (JSON on stdout).
    Classify {
        /// Tag text; omit when using --run.
        #[arg(required_unless_present = "run", conflicts_with = "run")]
        prompt: Option<String>,
        /// Run directory whose final prompt to classify.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Merge the content of one prompt with the style of another.
    Fuse {
        /// Classified prompt JSON file, or tag text.
        #[arg(long)]
        style: String,
        /// Classified prompt JSON file, or tag text.
        #[arg(long)]
        content: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write a mock reference image carrying the given vocabulary words.
    Plant {
        words: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
    },
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(AppConfig::default()),
    }
}

fn save_cache(config: &AppConfig, rt: &Runtime) -> Result<()> {
    if let Some(path) = &config.cache.path {
        rt.cache.save(path)?;
    }
    Ok(())
}

fn read_reference(path: &Path) -> Result<ImageRef> {
    if !path.exists() {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: "no such file".into(),
        }
        .into());
    }
    Ok(ImageRef::from_path(path)?)
}

fn cmd_run(cli: &Cli, image: &Path) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let reference = read_reference(image)?;
    let rt = config.build()?;
    let optimizer = Optimizer::new(rt.backends.clone(), rt.templates.clone(), rt.cache.clone(), config.run.clone())?;
    let run_id = run_id_now();
    let mut dir = RunStore::new(&cli.out).run_dir(&run_id);
    let result = optimizer.run_with_id(&run_id, &reference, &mut dir)?;
    save_cache(&config, &rt)?;

    println!("run: {}", dir.path().display());
    println!("final prompt: {}", result.final_prompt.render());
    println!(
        "score: {:.2} (initial {:.2}) after {} iteration(s), stop: {}",
        result.final_score.reported(),
        result.initial_score.reported(),
        result.iterations.len(),
        serde_json::to_value(result.stop_reason)?.as_str().unwrap_or_default()
    );
    if result.stop_reason == StopReason::Error {
        eprintln!("error: {}", result.error.as_deref().unwrap_or("unknown"));
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Run ids for CLI runs: wall-clock based so directories sort by start time.
fn run_id_now() -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    format!("run-{}-{:09}", now.as_secs(), now.subsec_nanos())
}

fn cmd_eval(cli: &Cli, manifest: &Path, method: Method) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let manifest = DatasetManifest::load(manifest)?;
    let rt = config.build()?;
    let method: Box<dyn PromptMethod> = match method {
        Method::Identity => Box::new(IdentityMethod),
        Method::Caption => Box::new(CaptionMethod(rt.backends.caption.clone())),
        Method::Arpo => Box::new(ArpoMethod(Optimizer::new(
            rt.backends.clone(),
            rt.templates.clone(),
            rt.cache.clone(),
            config.run.clone(),
        )?)),
    };
    let ctx = EvalContext {
        scorer: ClipScorer::new(rt.backends.text_embed.clone(), rt.backends.image_embed.clone(), rt.cache.clone()),
        generator: rt.eval_generator.clone(),
        extractors: rt.extractors.clone(),
        optimization_profile: rt.optimization_label.clone(),
        generation_profile: rt.generation_label.clone(),
    };
    let report = eval_manifest(&manifest, method.as_ref(), &ctx, &config.evaluation)?;
    report.write(&cli.out)?;
    save_cache(&config, &rt)?;
    print!("{}", report.render_table());
    Ok(ExitCode::SUCCESS)
}

fn cmd_classify(cli: &Cli, prompt: Option<&str>, run: Option<&Path>) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let (prompt, origin) = match (prompt, run) {
        (Some(text), None) => (parse_tags(text), EXTERNAL_ORIGIN.to_string()),
        (None, Some(dir)) => {
            let result = RunDir::at(dir).read_final()?;
            (result.final_prompt, result.run_id)
        }
        _ => bail!("give either a prompt or --run"),
    };
    let rt = config.build()?;
    let classified = editing::classify(&prompt, rt.backends.llm.as_ref(), &rt.templates, &origin)?;
    println!("{}", serde_json::to_string_pretty(&classified)?);
    Ok(ExitCode::SUCCESS)
}

fn classified_arg(arg: &str, rt: &Runtime) -> Result<ClassifiedPrompt> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("{} is not a classified prompt", path.display()));
    }
    Ok(editing::classify(&parse_tags(arg), rt.backends.llm.as_ref(), &rt.templates, EXTERNAL_ORIGIN)?)
}

fn cmd_fuse(cli: &Cli, style: &str, content: &str) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let rt = config.build()?;
    let fused = editing::fuse(&classified_arg(style, &rt)?, &classified_arg(content, &rt)?)?;
    println!("{}", fused.render());
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(cli: &Cli, bind: SocketAddr) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let rt = config.build()?;
    let store_dir = config.service.store_dir.clone().unwrap_or_else(|| cli.out.join("runs"));
    let state = AppState::new(rt, config.run.clone(), RunStore::new(store_dir), config.service.max_concurrent_runs);
    let listener = std::net::TcpListener::bind(bind).with_context(|| format!("binding {bind}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    revprompt_service::serve_blocking(Arc::new(state), listener)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_plant(words: &[String], output: &Path, width: u32, height: u32) -> Result<ExitCode> {
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(output, render_png(words, width, height, 0)).with_context(|| format!("writing {}", output.display()))?;
    Ok(ExitCode::SUCCESS)
}

/// Usage problems (bad config, missing or unreadable input files) exit with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. }
                | Error::Image { .. }
                | Error::Io { .. }
                | Error::Manifest(_)
                | Error::EmptyManifest
                | Error::InvalidTemplate { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Run { image } => cmd_run(&cli, image),
        Command::Eval { manifest, method } => cmd_eval(&cli, manifest, *method),
        Command::Classify { prompt, run } => cmd_classify(&cli, prompt.as_deref(), run.as_deref()),
        Command::Fuse { style, content } => cmd_fuse(&cli, style, content),
        Command::Serve { bind } => cmd_serve(&cli, *bind),
        Command::Plant {
            words,
            output,
            width,
            height,
        } => cmd_plant(words, output, *width, *height),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
