//! The `textir` command line.

use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use textir::features::{FeatureExtractor, RandomConvExtractor, Vgg16Extractor};
use textir::metrics::{evaluate_dataset, EvalOptions, PerceptualMetric, SsimConfig, TextSource};
use textir::training::{Dataset, TrainConfig, Trainer};
use textir::Task;

use crate::http::{router, AppState, PoolConfig};
use crate::request::{RawRequest, RequestError, RestoreRequest};
use crate::service::{LoadedModel, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "textir", version, about = "Text-conditioned image restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a restorer from a run config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Restore one image.
    Restore(RestoreArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, env = "TEXTIR_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "captions")]
    pub text_source: TextSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only score entries of this split.
    #[arg(long)]
    pub split: Option<String>,
    /// Where the JSON report goes.
    #[arg(long, default_value = "eval-report.json")]
    pub output: PathBuf,
    /// VGG16 safetensors for the perceptual metric; a random-weight proxy otherwise.
    #[arg(long)]
    pub vgg_weights: Option<PathBuf>,
    #[arg(long, env = "TEXTIR_CLIP_DIR")]
    pub clip_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub image: PathBuf,
    /// 8-bit PNG, 255 = keep.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub sr_factor: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long, env = "TEXTIR_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "restored.png")]
    pub output: PathBuf,
    #[arg(long, env = "TEXTIR_CLIP_DIR")]
    pub clip_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "TEXTIR_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "TEXTIR_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "TEXTIR_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, env = "TEXTIR_QUEUE_DEPTH", default_value_t = 16)]
    pub queue_depth: usize,
    #[arg(long, env = "TEXTIR_CLIP_DIR")]
    pub clip_dir: Option<PathBuf>,
}

/// Bad input (exit 2) or a failure while doing the work (exit 1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Failed(_) => ExitCode::from(1),
        }
    }
}

impl From<textir::Error> for CliError {
    fn from(e: textir::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<RequestError> for CliError {
    fn from(e: RequestError) -> Self {
        CliError::Usage(format!("invalid request: {e}"))
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Invalid(_) | ServiceError::TaskMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Restore(a) => restore(a),
        Command::Serve(a) => serve(a),
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let dev = Device::Cpu;
    let mut config = TrainConfig::from_file(&a.config).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = a.output_dir {
        config.output_dir = dir;
    }
    if let Some(n) = a.max_iters {
        config.max_iters = n;
    }
    let provider = config.provider.build(&dev)?;
    let extractor = config.extractor.build(&dev)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::resume(path, provider, extractor, &dev)?;
            if let Some(n) = a.max_iters {
                t.set_max_iters(n);
            }
            t
        }
        None => Trainer::new(config.clone(), provider, extractor, &dev)?,
    };
    let dataset = Dataset::open(&config.dataset)?.split(config.split.as_deref());
    if dataset.is_empty() {
        return Err(CliError::Usage(format!(
            "no images in {} for split {:?}",
            config.dataset.display(),
            config.split
        )));
    }
    fs::create_dir_all(&trainer.config().output_dir)?;
    fs::write(trainer.config().output_dir.join("config.toml"), trainer.config().to_toml()?)?;
    match trainer.fit(&dataset)? {
        Some(m) => println!("step {} total {:.6} pixel {:.6}", m.step, m.report.total, m.report.terms.pixel),
        None => println!("nothing to do: already at step {}", trainer.step()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let dev = Device::Cpu;
    let loaded = LoadedModel::load(&a.checkpoint, a.clip_dir.as_deref(), &dev)?;
    if loaded.spec().task != a.task {
        return Err(CliError::Usage(format!(
            "checkpoint restores {}, not {}",
            loaded.spec().task,
            a.task
        )));
    }
    let extractor: Arc<dyn FeatureExtractor> = match &a.vgg_weights {
        Some(p) => Arc::new(Vgg16Extractor::load(p, &dev)?),
        None => {
            log::warn!("no --vgg-weights; perceptual scores use an uncalibrated random-weight proxy");
            Arc::new(RandomConvExtractor::new(0))
        }
    };
    let dataset = Dataset::open(&a.dataset)?.split(a.split.as_deref());
    let options = EvalOptions {
        task: a.task,
        resolution: loaded.spec().resolution,
        text_source: a.text_source,
        seed: a.seed,
        strokes: Default::default(),
        ssim: SsimConfig::default(),
    };
    let metric = PerceptualMetric::new(extractor);
    let report = evaluate_dataset(loaded.model(), &dataset, loaded.provider().as_ref(), &metric, &options)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
    write_file(&a.output, json.as_bytes())?;
    print!("{}", report.table());
    Ok(())
}

fn read_input(path: &Path, field: &'static str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| RequestError::new(field, format!("{}: {e}", path.display())).into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn restore(a: RestoreArgs) -> Result<(), CliError> {
    let raw = RawRequest {
        task: Some(a.task),
        image: Some(read_input(&a.image, "image")?),
        mask: a.mask.as_deref().map(|p| read_input(p, "mask")).transpose()?,
        prompt: a.prompt,
        beta: a.beta,
        sr_factor: a.sr_factor,
        seed: a.seed,
        betas: None,
    };
    let req = RestoreRequest::parse(&raw)?;
    let checkpoint = a
        .checkpoint
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --checkpoint or set TEXTIR_CHECKPOINT".into()))?;
    let loaded = LoadedModel::load(&checkpoint, a.clip_dir.as_deref(), &Device::Cpu)?;
    let out = loaded.restore(&req)?;
    write_file(&a.output, &out.png)?;
    println!(
        "{}",
        serde_json::to_string(&out.metadata).map_err(|e| CliError::Failed(e.to_string()))?
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let state = AppState::new(PoolConfig {
        workers: a.workers,
        queue_depth: a.queue_depth,
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {addr}");
        if let Some(path) = a.checkpoint {
            let state = state.clone();
            let clip_dir = a.clip_dir.clone();
            tokio::task::spawn_blocking(move || {
                match LoadedModel::load(&path, clip_dir.as_deref(), &Device::Cpu) {
                    Ok(m) => {
                        log::info!("loaded {} ({})", path.display(), m.version());
                        state.set_model(m);
                    }
                    Err(e) => log::error!("cannot load {}: {e}", path.display()),
                }
            });
        } else {
            log::warn!("no checkpoint given; restore requests will get 503");
        }
        axum::serve(listener, router(state)).await?;
        Ok::<_, CliError>(())
    })
}
