//! Subcommand arguments and their drivers.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tonelut_core::corpus::{default_corpus, generate, DEFAULT_CORPUS_SEED, DEFAULT_CORPUS_SIZE};
use tonelut_core::embed::EmbeddingProvider;
use tonelut_core::eval::{assess_filters, assessment_table, evaluate, filter_registry, strength_sweep};
use tonelut_core::formats::{
    checkpoint_to_bytes, encode_png, encode_ppm, load_checkpoint, read_cube, read_image, write_image, Checkpoint,
};
use tonelut_core::image::ImageBuffer;
use tonelut_core::losses::LossWeights;
use tonelut_core::lut::{lookup, DEFAULT_GRID_SIZE};
use tonelut_core::train::{
    build_toy_bundle, format_progress, AugmentConfig, BundleOptions, TrainConfig, TrainCorpus, TrainState, Trainer,
};
use tonelut_core::{Error, Result};

use crate::service::{self, ServiceConfig, DEFAULT_MAX_IMAGE_DIM};
use crate::{cube_text, cube_title, read_image_dir, write_atomic, LoadedModel};

#[derive(Debug, Parser)]
#[command(name = "tonelut", version, about = "Text-conditioned 3D LUT tone adjustment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the text adapter on an image corpus.
    Train(TrainArgs),
    /// Adjust one image toward a text description.
    Adjust(AdjustArgs),
    /// Apply a `.cube` LUT to an image.
    ApplyLut(ApplyLutArgs),
    /// Score adjusted images: SSIM, image similarity, directional similarity.
    Eval(EvalArgs),
    /// Compare relative similarity of filtered and source images.
    AssessFilters(AssessArgs),
    /// Adjust one image at several strengths.
    Sweep(SweepArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write the procedural image corpus to a directory.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of .png/.ppm images; the built-in corpus when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Training texts, comma separated or repeated.
    #[arg(long, value_delimiter = ',', default_value = "red photo")]
    pub texts: Vec<String>,
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Modulation strength used while training.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_content: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_clip: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_lut: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_interval: f64,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Adapter hidden width.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Disable crop, flip and jitter.
    #[arg(long)]
    pub no_augment: bool,
    /// Continue from a checkpoint that carries optimizer and RNG state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a progress line every N steps (0 = never).
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history (JSON lines); defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            augment: if self.no_augment {
                AugmentConfig::identity()
            } else {
                AugmentConfig::default()
            },
            s: self.s,
            loss: LossWeights {
                content: self.lambda_content,
                clip: self.lambda_clip,
                lut: self.lambda_lut,
                weight: self.lambda_weight,
                interval: self.lambda_interval,
                alpha: self.alpha,
            },
            ..TrainConfig::default()
        }
    }

    fn bundle_options(&self) -> BundleOptions {
        BundleOptions {
            grid_size: self.grid_size,
            hidden: self.hidden,
            ..BundleOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Embedding store (JSON lines) for file-store mode; toy embedder otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<LoadedModel> {
        LoadedModel::load(&self.checkpoint, self.embeddings.as_deref())
    }
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub s: f64,
    /// Output image (.png or .ppm).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fused LUT as a `.cube` file.
    #[arg(long)]
    pub export_cube: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyLutArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory of images; the built-in corpus when omitted.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub texts: Vec<String>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub s: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// Directory of images; the built-in corpus when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1", allow_negative_numbers = true)]
    pub s_values: Vec<f64>,
    /// Write each output as `s_<value>.png` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 binds an ephemeral port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_MAX_IMAGE_DIM)]
    pub max_image_dim: usize,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CORPUS_SIZE)]
    pub count: usize,
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Adjust(a) => adjust(&a),
        Command::ApplyLut(a) => apply_lut(&a),
        Command::Eval(a) => eval(&a),
        Command::AssessFilters(a) => assess(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Serve(a) => serve(a),
        Command::GenCorpus(a) => gen_corpus(&a),
    }
}

fn images_or_default(dir: Option<&Path>) -> Result<Vec<(String, ImageBuffer<f64>)>> {
    match dir {
        Some(d) => read_image_dir(d),
        None => Ok(default_corpus()?
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("corpus_{i:03}"), img))
            .collect()),
    }
}

fn encode_for(path: &Path, image: &ImageBuffer<f64>) -> Result<Vec<u8>> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => encode_png(image),
        Some("ppm") => encode_ppm(image),
        _ => Err(Error::Config(format!("{}: output must end in .png or .ppm", path.display()))),
    }
}

#[derive(Serialize)]
struct HistoryLine {
    step: u64,
    total: f64,
    content: f64,
    clip_directional: f64,
    weight_l2: f64,
    interval: f64,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config();
    cfg.validate()?;
    let texts: Vec<String> = a.texts.iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    let images = images_or_default(a.corpus.as_deref())?.into_iter().map(|(_, img)| img).collect();
    let corpus = TrainCorpus::new(images, texts)?;
    let state = match &a.resume {
        Some(path) => load_checkpoint::<f64>(path)?.into_train_state(cfg.seed),
        None => TrainState::fresh(build_toy_bundle(&a.bundle_options(), cfg.seed)?, cfg.seed),
    };
    let mut trainer = Trainer::new(state, corpus, &EmbeddingProvider::toy(), cfg.clone())?;
    let log_every = a.log_every;
    let history = trainer.run(cfg.steps, |step, report, _| {
        if log_every > 0 && (step % log_every == 0 || step == 1) {
            eprintln!("{}", format_progress(step, report));
        }
        Ok(())
    })?;
    let first_step = trainer.step_count() - history.len() as u64;

    let config = serde_json::json!({ "train": cfg, "bundle": a.bundle_options() });
    let bytes = checkpoint_to_bytes(&Checkpoint::from_train_state(trainer.into_state(), config))?;
    let mut lines = String::new();
    for (i, r) in history.iter().enumerate() {
        let line = HistoryLine {
            step: first_step + i as u64 + 1,
            total: r.total,
            content: r.content,
            clip_directional: r.clip_directional,
            weight_l2: r.weight_l2,
            interval: r.interval,
        };
        lines.push_str(&serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?);
        lines.push('\n');
    }
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.jsonl");
        PathBuf::from(p)
    });
    write_atomic(&a.out, &bytes)?;
    write_atomic(&history_path, lines.as_bytes())?;
    println!("wrote {} ({} steps) and {}", a.out.display(), history.len(), history_path.display());
    Ok(())
}

pub fn adjust(a: &AdjustArgs) -> Result<()> {
    let model = a.model.load()?;
    let image = read_image::<f64>(&a.image)?;
    let out = model.adjust(&image, &a.text, a.s)?;
    // Everything is encoded before anything is written.
    let image_bytes = encode_for(&a.out, &out.image)?;
    let cube = a
        .export_cube
        .as_ref()
        .map(|_| cube_text(&out, &cube_title(&a.text, a.s)))
        .transpose()?;
    write_atomic(&a.out, &image_bytes)?;
    if let (Some(path), Some(text)) = (&a.export_cube, cube) {
        write_atomic(path, text.as_bytes())?;
    }
    let w: Vec<String> = out.weights.as_slice().iter().map(|v| format!("{v:.6}")).collect();
    println!("wrote {} (weights {})", a.out.display(), w.join(","));
    Ok(())
}

pub fn apply_lut(a: &ApplyLutArgs) -> Result<()> {
    let (lut, coords) = read_cube::<f64>(&a.cube)?.into_parts()?;
    let image = read_image::<f64>(&a.image)?;
    let out = lookup(&lut, &coords, &image)?;
    write_atomic(&a.out, &encode_for(&a.out, &out)?)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = a.model.load()?;
    let images = images_or_default(a.images.as_deref())?;
    let report = evaluate(&model.bundle, &images, &a.texts, &model.provider, a.s)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        tonelut_core::formats::write_json(&report, path)?;
    }
    Ok(())
}

pub fn assess(a: &AssessArgs) -> Result<()> {
    let images: Vec<_> = images_or_default(a.corpus.as_deref())?.into_iter().map(|(_, img)| img).collect();
    let rows = assess_filters(&images, &filter_registry(), &EmbeddingProvider::toy())?;
    print!("{}", assessment_table(&rows));
    if let Some(path) = &a.json {
        tonelut_core::formats::write_json(&rows, path)?;
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let model = a.model.load()?;
    let image = read_image::<f64>(&a.image)?;
    let target = model.target(&a.text)?;
    let provider = model.provider.is_differentiable().then_some(&model.provider);
    let report = strength_sweep(&model.bundle, &image, &target, &a.s_values, provider)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for e in &report.entries {
            write_image(&e.image, dir.join(format!("s_{}.png", e.s)))?;
        }
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        host: a.host,
        port: a.port,
        checkpoint: a.model.checkpoint,
        embeddings: a.model.embeddings,
        max_image_dim: a.max_image_dim,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("tokio runtime"),
        source: e,
    })?;
    runtime.block_on(service::serve(cfg, |addr| {
        println!("listening on http://{addr}");
        println!("port {}", addr.port());
        let _ = std::io::stdout().flush();
    }))
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let images = generate::<f64>(a.count, a.size, a.size, a.seed)?;
    for (i, img) in images.iter().enumerate() {
        write_image(img, a.out.join(format!("img_{i:03}.png")))?;
    }
    println!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}
