//! `nhvc` command implementations.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use nhvc_core::cache::FeatureCache;
use nhvc_core::config::RunConfig;
use nhvc_core::conversion::{ConversionRequest, Converter, DEFAULT_TEMPERATURE};
use nhvc_core::dsp::{load_wav, mel_filterbank, mel_spectrogram, resample, stft, write_wav};
use nhvc_core::evaluation::{evaluate_pairs, AsrPlugin, CommandAsr, EvalPair};
use nhvc_core::features::FeatureExtractor;
use nhvc_core::manifest::{load_pairs, DatasetManifest};
use nhvc_core::training::{
    latest_checkpoint, load_checkpoint, load_model, run_training, Dataset, RunOutputs, TrainState,
};
use nhvc_core::Error;

pub mod plot;

/// Overrides the feature cache root.
pub const CACHE_ENV: &str = "NHVC_CACHE";

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_STATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nhvc", version, about = "Human-to-non-human voice conversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a complete configuration file.
    PrintConfig {
        /// Desk-scale preset instead of the full model.
        #[arg(long)]
        tiny: bool,
    },
    /// Extract and cache training features for every manifest item.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, env = CACHE_ENV)]
        out_dir: Option<PathBuf>,
    },
    /// Train from a feature cache, optionally resuming.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, env = CACHE_ENV)]
        cache: Option<PathBuf>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long, conflicts_with = "resume_latest")]
        resume: Option<PathBuf>,
        /// Resume from the newest checkpoint in the checkpoint directory.
        #[arg(long)]
        resume_latest: bool,
        /// Stop at this step instead of the configured maximum.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Convert a source clip to the timbre of a reference clip.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature settings; taken from the checkpoint when omitted.
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
    /// Score (source, converted) pairs.
    Evaluate {
        /// Newline-delimited {source, converted, id?, linguistic?} records.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// ASR command; the WAV path is appended and the transcript read from stdout.
        #[arg(long)]
        asr_endpoint: Option<String>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Render a mel spectrogram to PNG.
    Plot {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 8000.0)]
        max_freq: f64,
        #[arg(long, default_value_t = 128)]
        n_mels: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
}

/// Process exit status for an error chain.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::State(_) | Error::NonFiniteLoss { .. } | Error::Tensor(_)) => EXIT_STATE,
        Some(_) => EXIT_DATA,
        None => 1,
    }
}

fn announce(cfg: &RunConfig) -> Result<String> {
    let hash = cfg.hash()?;
    println!("config hash {hash}");
    Ok(hash)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrintConfig { tiny } => {
            let cfg = if tiny { RunConfig::tiny() } else { RunConfig::default() };
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Preprocess {
            manifest,
            config,
            out_dir,
        } => {
            let cfg = config.load()?;
            announce(&cfg)?;
            let out = out_dir.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let s = preprocess(&cfg, &manifest, &out)?;
            println!("computed {} skipped {} failed {}", s.computed, s.skipped, s.failed);
            if s.failed > 0 && s.computed + s.skipped == 0 {
                return Err(Error::Data("no manifest item could be processed".into()).into());
            }
            Ok(())
        }
        Command::Train {
            config,
            cache,
            checkpoint_dir,
            resume,
            resume_latest,
            max_steps,
            metrics,
        } => {
            let cfg = config.load()?;
            let hash = announce(&cfg)?;
            let ckpt_dir = checkpoint_dir.unwrap_or_else(|| cfg.paths.checkpoint_dir.clone());
            let resume = match (resume, resume_latest) {
                (Some(p), _) => Some(p),
                (None, true) => latest_checkpoint(&ckpt_dir),
                (None, false) => None,
            };
            let opts = TrainOptions {
                cache: cache.unwrap_or_else(|| cfg.paths.cache_dir.clone()),
                checkpoint_dir: ckpt_dir,
                resume,
                max_steps: max_steps.unwrap_or(cfg.train.max_steps),
                metrics: metrics.unwrap_or_else(|| cfg.paths.metrics_log.clone()),
            };
            let step = train(&cfg, &hash, &opts)?;
            println!("finished at step {step}");
            Ok(())
        }
        Command::Convert {
            checkpoint,
            source,
            reference,
            out,
            temperature,
            seed,
            config,
        } => convert(&checkpoint, &source, &reference, &out, temperature, seed, config.as_deref()),
        Command::Evaluate {
            pairs,
            out,
            asr_endpoint,
            config,
        } => {
            let cfg = config.load()?;
            let hash = announce(&cfg)?;
            let asr = asr_endpoint.as_deref().map(CommandAsr::parse).transpose()?;
            evaluate(&cfg, &hash, &pairs, &out, asr.as_ref().map(|a| a as &dyn AsrPlugin))
        }
        Command::Plot {
            audio,
            out,
            max_freq,
            n_mels,
            config,
        } => {
            let cfg = config.load()?;
            announce(&cfg)?;
            let (w, h) = plot_mel(&cfg, &audio, &out, max_freq, n_mels)?;
            println!("wrote {} ({w}x{h})", out.display());
            Ok(())
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

enum Outcome {
    Computed,
    Skipped,
    Failed,
}

/// Extracts features for every manifest item not already cached under the
/// current feature hash.
pub fn preprocess(cfg: &RunConfig, manifest: &Path, out_dir: &Path) -> Result<PreprocessSummary> {
    let manifest = DatasetManifest::load(manifest)?;
    let backend = cfg.ssl.build()?;
    let extractor = FeatureExtractor::new(&cfg.stft, &cfg.features, backend.as_ref())?;
    let cache = FeatureCache::new(out_dir, cfg.feature_hash()?);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let hop = cfg.stft.hop_samples;
    let outcomes: Vec<Outcome> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let id = entry.path.display().to_string();
            if cache.is_fresh(&id) {
                return Outcome::Skipped;
            }
            let result = load_wav(&entry.path).and_then(|mut clip| {
                clip.category = Some(entry.category);
                let f = extractor.extract(&id, &clip, Some(&cfg.perturb))?;
                cache.store(&f, hop)
            });
            match result {
                Ok(_) => Outcome::Computed,
                Err(e) => {
                    log::warn!("skipping {id}: {e}");
                    Outcome::Failed
                }
            }
        })
        .collect();
    let mut s = PreprocessSummary::default();
    for o in outcomes {
        match o {
            Outcome::Computed => s.computed += 1,
            Outcome::Skipped => s.skipped += 1,
            Outcome::Failed => s.failed += 1,
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub cache: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub max_steps: u64,
    pub metrics: PathBuf,
}

/// Runs training and returns the final step.
pub fn train(cfg: &RunConfig, hash: &str, opts: &TrainOptions) -> Result<u64> {
    let cache = FeatureCache::new(&opts.cache, cfg.feature_hash()?);
    let clips = cache.load_all()?;
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no features under {} match this config; run preprocess first",
            opts.cache.display()
        ))
        .into());
    }
    let data = Dataset::new(clips, cfg.train.segment_frames, cfg.stft.hop_samples)?;
    let device = Device::Cpu;
    let mut state = match &opts.resume {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::State(format!("checkpoint {} does not exist", p.display())).into());
            }
            let s = load_checkpoint(p, &device, Some(hash))?;
            log::info!("resuming from {} at step {}", p.display(), s.step());
            s
        }
        None => TrainState::new(&cfg.model, &cfg.train, &cfg.fdrl, &cfg.loss, hash, DType::F32, &device)?,
    };
    state.run_config = Some(serde_json::to_value(cfg)?);
    if let Some(dir) = opts.metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&opts.metrics)
            .with_context(|| format!("opening {}", opts.metrics.display()))?,
    );
    let (_, written) = run_training(
        &mut state,
        &data,
        opts.max_steps,
        RunOutputs {
            metrics: Some(&mut log),
            checkpoint_dir: Some(&opts.checkpoint_dir),
        },
    )?;
    log.flush()?;
    for p in written {
        println!("checkpoint {}", p.display());
    }
    Ok(state.step())
}

pub fn convert(
    checkpoint: &Path,
    source: &Path,
    reference: &Path,
    out: &Path,
    temperature: f64,
    seed: u64,
    config: Option<&Path>,
) -> Result<()> {
    if !checkpoint.is_file() {
        return Err(Error::State(format!("checkpoint {} does not exist", checkpoint.display())).into());
    }
    let (model, meta) = load_model(checkpoint, &Device::Cpu)?;
    let cfg = match (config, meta.run_config) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(v)) => serde_json::from_value(v).map_err(|e| Error::State(format!("checkpoint config: {e}")))?,
        (None, None) => bail!(Error::config("checkpoint carries no feature settings; pass --config")),
    };
    announce(&cfg)?;
    let backend = cfg.ssl.build()?;
    let extractor = FeatureExtractor::new(&cfg.stft, &cfg.features, backend.as_ref())?;
    let converter = Converter::new(&model, &extractor)?;
    let req = ConversionRequest {
        source: load_wav(source)?,
        reference: load_wav(reference)?,
        temperature,
        seed,
    };
    let y = converter.convert(&req)?;
    write_wav(out, &y)?;
    println!("wrote {} ({} samples at {} Hz)", out.display(), y.len(), y.sample_rate());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, hash: &str, pairs: &Path, out: &Path, asr: Option<&dyn AsrPlugin>) -> Result<()> {
    let entries = load_pairs(pairs)?;
    let pairs = entries
        .into_iter()
        .map(|e| {
            let to_rate = |p: &Path| -> Result<_> { Ok(resample(&load_wav(p)?, cfg.stft.sample_rate)?) };
            Ok(EvalPair {
                id: e.id.unwrap_or_else(|| e.source.display().to_string()),
                source: to_rate(&e.source)?,
                converted: to_rate(&e.converted)?,
                linguistic: e.linguistic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = evaluate_pairs(&pairs, asr, &cfg.stft, cfg.features.energy_epsilon)?;
    report.config_hash = Some(hash.to_string());
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    report.write_ndjson(&mut w)?;
    w.flush()?;
    println!(
        "{} pairs, mean PCC-E {}, mean RMSE-E {}",
        report.count,
        report.mean_pcc_e.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.mean_rmse_e.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

/// Writes the image and returns its (width, height).
pub fn plot_mel(cfg: &RunConfig, audio: &Path, out: &Path, max_freq: f64, n_mels: usize) -> Result<(u32, u32)> {
    let clip = resample(&load_wav(audio)?, cfg.stft.sample_rate)?;
    let nyquist = cfg.stft.sample_rate as f64 / 2.0;
    if !(max_freq > 0.0 && max_freq <= nyquist) {
        return Err(Error::config(format!("--max-freq must be in (0, {nyquist}]")).into());
    }
    let fb = mel_filterbank(&cfg.stft, n_mels, 0.0, max_freq, cfg.features.mel_norm)?;
    let mel = mel_spectrogram(&stft(&clip, &cfg.stft)?, &fb, true)?;
    let img = plot::render(&mel.frames);
    let dims = img.dimensions();
    img.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(dims)
}
