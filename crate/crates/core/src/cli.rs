//! The `pixelmeta` command line.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or input, 2 for I/O
//! failures. Every subcommand writes a JSON echo of its resolved settings,
//! including any seed generated because none was given. Flags can also be
//! set through `PIXELMETA_*` environment variables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::load_checkpoint;
use crate::dataset::{load_manifest, Dataset, SplitSide};
use crate::encoder::EncoderParams;
use crate::episode::{sample_episode, EpisodeShape};
use crate::error::{Error, Result};
use crate::eval::{predict_episode, run_protocol, Averaging, EvalConfig, IoUAccumulator};
use crate::meta_learner::{meta_train, LossVariant, TrainConfig};
use crate::metric::Metric;
use crate::pseudo_label::{generate_pseudo_mask, MaskQuality, MaskSource, PseudoLabelConfig, Supervision};
use crate::synth::{generate_synthetic_dataset, SynthConfig};
use crate::tensor::save_tensor;

#[derive(Debug, Parser)]
#[command(name = "pixelmeta", version, about = "Weakly supervised few-shot segmentation with pixel-level meta-learning")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0, env = "PIXELMETA_THREADS")]
    pub threads: usize,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", env = "PIXELMETA_LOG")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Build pseudo masks from heatmaps, embeddings and saliency.
    PseudoGen(PseudoGenArgs),
    /// Meta-train the pixel encoder on base-class episodes.
    Train(TrainArgs),
    /// Segment the queries of one novel-class episode.
    Segment(SegmentArgs),
    /// Run the mean-IoU evaluation protocol on the novel split.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Segmentation classes, excluding background.
    #[arg(long, default_value_t = 7, env = "PIXELMETA_CLASSES")]
    pub classes: usize,
    /// How many of the classes form the novel split.
    #[arg(long, default_value_t = 2, env = "PIXELMETA_NOVEL")]
    pub novel: usize,
    #[arg(long, default_value_t = 24, env = "PIXELMETA_SAMPLES_PER_CLASS")]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 16, env = "PIXELMETA_HEIGHT")]
    pub height: usize,
    #[arg(long, default_value_t = 16, env = "PIXELMETA_WIDTH")]
    pub width: usize,
    /// Feature channels.
    #[arg(long, default_value_t = 32, env = "PIXELMETA_DIM")]
    pub dim: usize,
    /// Per-channel feature noise.
    #[arg(long, default_value_t = 0.15, env = "PIXELMETA_NOISE")]
    pub noise: f32,
    /// Fraction of each object the matching heatmap covers.
    #[arg(long, default_value_t = 0.85, env = "PIXELMETA_COVERAGE")]
    pub coverage: f64,
    #[arg(long, env = "PIXELMETA_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PseudoArgs {
    /// Foreground threshold on the normalized fused heatmap.
    #[arg(long, default_value_t = 0.5, env = "PIXELMETA_TAU")]
    pub tau: f32,
    /// Saliency gate threshold.
    #[arg(long = "theta-s", default_value_t = 0.5, env = "PIXELMETA_THETA_S")]
    pub theta_s: f32,
    /// Skip saliency gating.
    #[arg(long)]
    pub no_saliency: bool,
    /// Floor on `1 - cos` when weighting heatmaps.
    #[arg(long, default_value_t = 1e-6, env = "PIXELMETA_EPSILON")]
    pub epsilon: f32,
}

impl PseudoArgs {
    fn config(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            saliency_threshold: self.theta_s,
            mask_threshold: self.tau,
            use_saliency: !self.no_saliency,
            weight_epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PseudoGenArgs {
    #[arg(long, env = "PIXELMETA_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pseudo: PseudoArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, env = "PIXELMETA_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1, env = "PIXELMETA_WAYS")]
    pub ways: usize,
    #[arg(long, default_value_t = 1, env = "PIXELMETA_SHOTS")]
    pub shots: usize,
    #[arg(long, default_value_t = 2000, env = "PIXELMETA_EPISODES")]
    pub episodes: usize,
    #[arg(long, env = "PIXELMETA_SEED")]
    pub seed: Option<u64>,
    /// Pixels sampled per label per support image.
    #[arg(long, default_value_t = 100, env = "PIXELMETA_N_PIX")]
    pub n_pix: usize,
    /// Pixels sampled per label per query image; all labelled pixels when absent.
    #[arg(long, env = "PIXELMETA_QUERY_N_PIX")]
    pub query_n_pix: Option<usize>,
    #[arg(long, default_value_t = 1e-3, env = "PIXELMETA_LR")]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9, env = "PIXELMETA_MOMENTUM")]
    pub momentum: f32,
    #[arg(long, default_value_t = Metric::SquaredEuclidean, env = "PIXELMETA_METRIC")]
    pub metric: Metric,
    #[arg(long, default_value_t = LossVariant::Similarity, env = "PIXELMETA_LOSS")]
    pub loss: LossVariant,
    #[arg(long, default_value = "weak", env = "PIXELMETA_SUPERVISION")]
    pub supervision: Supervision,
    #[arg(long, default_value_t = 128, env = "PIXELMETA_HIDDEN1")]
    pub hidden1: usize,
    #[arg(long, default_value_t = 128, env = "PIXELMETA_HIDDEN2")]
    pub hidden2: usize,
    #[arg(long, default_value_t = 64, env = "PIXELMETA_OUTPUT_DIM")]
    pub output_dim: usize,
    /// Checkpoint interval in episodes; 0 saves only the final parameters.
    #[arg(long, default_value_t = 500, env = "PIXELMETA_CHECKPOINT_EVERY")]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub pseudo: PseudoArgs,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "encoder", required = true, multiple = false)]
pub struct EncoderChoice {
    /// Checkpoint root or checkpoint directory.
    #[arg(long, group = "encoder", env = "PIXELMETA_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Compare raw features instead of encoded ones.
    #[arg(long, group = "encoder")]
    pub no_encoder: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct InferenceArgs {
    #[arg(long, default_value_t = 1, env = "PIXELMETA_WAYS")]
    pub ways: usize,
    #[arg(long, default_value_t = 1, env = "PIXELMETA_SHOTS")]
    pub shots: usize,
    /// Neighbours in the k-NN vote.
    #[arg(long, default_value_t = 1, env = "PIXELMETA_KNN")]
    pub knn: usize,
    /// Support pixels sampled per label per support image.
    #[arg(long, default_value_t = 100, env = "PIXELMETA_N_PIX")]
    pub n_pix: usize,
    /// Distance for k-NN; defaults to the checkpoint's training metric.
    #[arg(long, env = "PIXELMETA_METRIC")]
    pub metric: Option<Metric>,
    /// Source of support masks.
    #[arg(long, default_value = "weak", env = "PIXELMETA_SUPERVISION")]
    pub supervision: Supervision,
    #[command(flatten)]
    pub pseudo: PseudoArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(long, env = "PIXELMETA_MANIFEST")]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderChoice,
    #[arg(long, env = "PIXELMETA_EPISODE_SEED")]
    pub episode_seed: Option<u64>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "PIXELMETA_MANIFEST")]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderChoice,
    #[arg(long, default_value_t = 5, env = "PIXELMETA_RUNS")]
    pub runs: usize,
    #[arg(long, default_value_t = 1000, env = "PIXELMETA_EPISODES")]
    pub episodes: usize,
    #[arg(long, env = "PIXELMETA_SEED")]
    pub seed: Option<u64>,
    /// accumulated | per-episode
    #[arg(long, default_value = "accumulated", env = "PIXELMETA_AVERAGING")]
    pub averaging: Averaging,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        log::info!("no seed given, using {s}");
        s
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `config.json` inside an output directory, or `<file>.config.json` beside an output file.
pub fn echo_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join("config.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".config.json");
        out.with_file_name(name)
    }
}

fn write_echo(out: &Path, out_is_dir: bool, command: &str, args: &impl Serialize, resolved: serde_json::Value) -> Result<()> {
    let echo = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "resolved": resolved,
    });
    write_json(&echo_path(out, out_is_dir), &echo)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::PseudoGen(a) => pseudo_gen(a),
        Command::Train(a) => train(a),
        Command::Segment(a) => segment(a),
        Command::Eval(a) => eval(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_classes: a.classes,
        n_novel: a.novel,
        samples_per_class: a.samples_per_class,
        height: a.height,
        width: a.width,
        feature_dim: a.dim,
        signal_dim: SynthConfig::default().signal_dim.min(a.dim),
        noise: a.noise,
        cam_coverage: a.coverage,
        seed: resolve_seed(a.seed),
        ..SynthConfig::default()
    };
    config.validate()?;
    let manifest = generate_synthetic_dataset(&config, &a.out)?;
    write_echo(&a.out, true, "synth", &a, json!({ "config": config }))?;
    println!(
        "wrote {} samples ({} base, {} novel classes) to {}",
        manifest.samples.len(),
        manifest.splits.base.len(),
        manifest.splits.novel.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PseudoSampleSummary {
    id: String,
    foreground_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recall: Option<f64>,
}

fn pseudo_gen(a: PseudoGenArgs) -> Result<()> {
    let config = a.pseudo.config();
    config.validate()?;
    let dataset = load_manifest(&a.manifest)?;
    let mask_dir = a.out.join("masks");
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    let mut per_sample = Vec::with_capacity(dataset.samples.len());
    let mut total: Option<MaskQuality> = None;
    for rec in &dataset.samples {
        let mask = generate_pseudo_mask(&dataset, rec, &config)?;
        save_tensor(&mask.to_tensor()?, mask_dir.join(format!("{}.pxt", rec.id)))?;
        let fg = mask.labels.iter().filter(|&&l| l != crate::dataset::BACKGROUND).count();
        let quality = match dataset.load_gt_mask(rec)? {
            Some(truth) => Some(MaskQuality::measure(&mask, &truth)?),
            None => None,
        };
        if let Some(q) = &quality {
            total = Some(total.map_or(*q, |t| t.merge(q)));
        }
        per_sample.push(PseudoSampleSummary {
            id: rec.id.clone(),
            foreground_pixels: fg,
            precision: quality.map(|q| q.precision),
            recall: quality.map(|q| q.recall),
        });
    }
    let summary = json!({
        "samples": per_sample,
        "total_foreground_pixels": per_sample.iter().map(|s| s.foreground_pixels).sum::<usize>(),
        "overall": total,
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    write_echo(&a.out, true, "pseudo-gen", &a, json!({ "pseudo": config }))?;
    match total {
        Some(t) => println!(
            "{} pseudo masks, precision {:.4}, recall {:.4}",
            per_sample.len(),
            t.precision,
            t.recall
        ),
        None => println!("{} pseudo masks (no ground truth to score)", per_sample.len()),
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        episodes: a.episodes,
        n_pix: a.n_pix,
        query_n_pix: a.query_n_pix,
        metric: a.metric,
        loss: a.loss,
        hidden1: a.hidden1,
        hidden2: a.hidden2,
        output_dim: a.output_dim,
        shape: EpisodeShape::new(a.ways, a.shots),
        supervision: a.supervision,
        pseudo: a.pseudo.config(),
        seed: resolve_seed(a.seed),
        checkpoint_every: a.checkpoint_every,
    };
    config.validate()?;
    let dataset = load_manifest(&a.manifest)?;
    let (params, report) = meta_train(&dataset, &config, Some(&a.out))?;
    write_json(&a.out.join("train_report.json"), &report)?;
    write_echo(&a.out, true, "train", &a, json!({ "config": config }))?;
    let tail = &report.losses[report.losses.len().saturating_sub(100)..];
    let tail_mean = if tail.is_empty() {
        f32::NAN
    } else {
        tail.iter().sum::<f32>() / tail.len() as f32
    };
    println!(
        "trained {} episodes in {:.1}s, final mean loss {tail_mean:.5}, params {}",
        report.losses.len(),
        report.wall_time_secs,
        &params.checksum()[..16]
    );
    Ok(())
}

fn load_encoder(choice: &EncoderChoice) -> Result<(Option<EncoderParams>, Option<Metric>)> {
    match &choice.checkpoint {
        Some(path) => {
            let (params, meta) = load_checkpoint(path)?;
            Ok((Some(params), Some(meta.metric)))
        }
        None => Ok((None, None)),
    }
}

fn check_input_dim(dataset: &Dataset, params: Option<&EncoderParams>) -> Result<()> {
    if let (Some(p), Some(rec)) = (params, dataset.samples.first()) {
        let channels = dataset.load_features(rec)?.channels;
        if channels != p.dims().input {
            return Err(Error::Validation(format!(
                "checkpoint expects {} feature channels, dataset has {channels}",
                p.dims().input
            )));
        }
    }
    Ok(())
}

fn eval_config(i: &InferenceArgs, trained_metric: Option<Metric>) -> EvalConfig {
    EvalConfig {
        shape: EpisodeShape::new(i.ways, i.shots),
        k: i.knn,
        n_pix: i.n_pix,
        supervision: i.supervision,
        pseudo: i.pseudo.config(),
        metric: i.metric.or(trained_metric).unwrap_or_default(),
        ..EvalConfig::default()
    }
}

fn segment(a: SegmentArgs) -> Result<()> {
    let dataset = load_manifest(&a.manifest)?;
    let (params, trained_metric) = load_encoder(&a.encoder)?;
    check_input_dim(&dataset, params.as_ref())?;
    let seed = resolve_seed(a.episode_seed);
    let config = EvalConfig {
        runs: 1,
        episodes: 1,
        seed,
        ..eval_config(&a.inference, trained_metric)
    };
    config.validate()?;
    let episode = sample_episode(&dataset.samples, &dataset.split, SplitSide::Novel, config.shape, seed)?;
    let masks = MaskSource::new(&dataset, config.supervision, config.pseudo);
    let predictions = predict_episode(&dataset, params.as_ref(), &episode, &masks, &config, seed)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut acc = IoUAccumulator::new(episode.class_roster.iter().copied().chain([crate::dataset::BACKGROUND]));
    let mut queries = Vec::new();
    for q in &predictions {
        let file = format!("{}.pred.pxt", q.sample_id);
        save_tensor(&q.predicted.to_tensor()?, a.out.join(&file))?;
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &l in &q.predicted.labels {
            *counts.entry(l).or_default() += 1;
        }
        let iou = match &q.truth {
            Some(t) => {
                let mut one = IoUAccumulator::new(acc.union.keys().copied());
                one.update(&q.predicted, t)?;
                acc.update(&q.predicted, t)?;
                one.mean_iou().ok()
            }
            None => None,
        };
        queries.push(json!({
            "sample": q.sample_id,
            "prediction": file,
            "label_counts": counts,
            "miou": iou,
        }));
    }
    let summary = json!({
        "episode_seed": seed,
        "class_roster": episode.class_roster,
        "support": episode.support.iter().map(|r| &r.id).collect::<Vec<_>>(),
        "queries": queries,
        "episode_miou": acc.mean_iou().ok(),
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    write_echo(&a.out, true, "segment", &a, json!({ "config": config }))?;
    match acc.mean_iou() {
        Ok(m) => println!("segmented {} queries, episode mIoU {m:.4}", predictions.len()),
        Err(_) => println!("segmented {} queries", predictions.len()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = load_manifest(&a.manifest)?;
    let (params, trained_metric) = load_encoder(&a.encoder)?;
    check_input_dim(&dataset, params.as_ref())?;
    let config = EvalConfig {
        runs: a.runs,
        episodes: a.episodes,
        seed: resolve_seed(a.seed),
        averaging: a.averaging,
        ..eval_config(&a.inference, trained_metric)
    };
    config.validate()?;
    let report = run_protocol(&dataset, params.as_ref(), &config)?;
    write_json(&a.out, &report)?;
    write_echo(&a.out, false, "eval", &a, json!({ "config": config }))?;
    println!(
        "{}-way {}-shot mIoU {:.4} ± {:.4} over {} runs",
        config.shape.ways, config.shape.shots, report.mean_miou, report.std_miou, config.runs
    );
    Ok(())
}
