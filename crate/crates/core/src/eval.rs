//! Episodic mean-IoU evaluation on the novel split.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset, SemanticMask, SplitSide, BACKGROUND, IGNORE};
use crate::encoder::EncoderParams;
use crate::episode::{sample_episode, Episode, EpisodeShape};
use crate::error::{Error, Result};
use crate::inference::{build_support_index, segment_query};
use crate::meta_learner::{EpisodeBatch, LabeledMap};
use crate::metric::Metric;
use crate::pseudo_label::{MaskSource, PseudoLabelConfig, Supervision};
use crate::rng::derive_seed;

/// Intersection and union pixel counts per class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoUAccumulator {
    pub intersection: BTreeMap<ClassId, u64>,
    pub union: BTreeMap<ClassId, u64>,
}

impl IoUAccumulator {
    /// Tracks `classes`; other predicted labels only count against the truth class.
    pub fn new(classes: impl IntoIterator<Item = ClassId>) -> Self {
        let mut acc = Self::default();
        for c in classes {
            acc.intersection.insert(c, 0);
            acc.union.insert(c, 0);
        }
        acc
    }

    /// Adds one prediction/truth pair. Pixels whose truth is ignore are skipped.
    pub fn update(&mut self, predicted: &SemanticMask, truth: &SemanticMask) -> Result<()> {
        if (predicted.height, predicted.width) != (truth.height, truth.width) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs truth {}x{}",
                predicted.height, predicted.width, truth.height, truth.width
            )));
        }
        for (&p, &t) in predicted.labels.iter().zip(&truth.labels) {
            if t == IGNORE {
                continue;
            }
            if p == t {
                if let Some(i) = self.intersection.get_mut(&t) {
                    *i += 1;
                    *self.union.get_mut(&t).unwrap() += 1;
                }
                continue;
            }
            for c in [p, t] {
                if let Some(u) = self.union.get_mut(&c) {
                    *u += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IoUAccumulator) {
        for (c, v) in &other.intersection {
            *self.intersection.entry(*c).or_default() += v;
        }
        for (c, v) in &other.union {
            *self.union.entry(*c).or_default() += v;
        }
    }

    /// IoU of every class with a nonzero union.
    pub fn per_class_iou(&self) -> BTreeMap<ClassId, f64> {
        self.union
            .iter()
            .filter(|(_, &u)| u > 0)
            .map(|(c, &u)| (*c, self.intersection[c] as f64 / u as f64))
            .collect()
    }

    /// Mean over classes with a nonzero union.
    pub fn mean_iou(&self) -> Result<f64> {
        let ious = self.per_class_iou();
        if ious.is_empty() {
            return Err(Error::UndefinedMetric("no class has a nonzero union".into()));
        }
        Ok(ious.values().sum::<f64>() / ious.len() as f64)
    }
}

/// Convenience for a single pair; classes are `roster ∪ {background}`.
pub fn update_accumulator(
    acc: &mut IoUAccumulator,
    predicted: &SemanticMask,
    truth: &SemanticMask,
) -> Result<()> {
    acc.update(predicted, truth)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Counts pooled over all episodes of a run.
    #[default]
    Accumulated,
    /// Mean of per-episode mIoU.
    PerEpisode,
}

impl std::str::FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "accumulated" => Ok(Averaging::Accumulated),
            "per-episode" => Ok(Averaging::PerEpisode),
            other => Err(format!("unknown averaging {other:?} (expected accumulated|per-episode)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub shape: EpisodeShape,
    pub runs: usize,
    pub episodes: usize,
    pub seed: u64,
    pub k: usize,
    /// Support pixels sampled per label per support image.
    pub n_pix: usize,
    pub supervision: Supervision,
    pub pseudo: PseudoLabelConfig,
    pub metric: Metric,
    pub averaging: Averaging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shape: EpisodeShape::new(1, 1),
            runs: 5,
            episodes: 1000,
            seed: 0,
            k: 1,
            n_pix: 100,
            supervision: Supervision::Weak,
            pseudo: PseudoLabelConfig::default(),
            metric: Metric::default(),
            averaging: Averaging::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.episodes == 0 {
            return Err(Error::Config("runs and episodes must be at least 1".into()));
        }
        if self.k == 0 || self.n_pix == 0 {
            return Err(Error::Config("k and n_pix must be at least 1".into()));
        }
        if self.shape.ways == 0 || self.shape.shots == 0 || self.shape.n_query == 0 {
            return Err(Error::Config("ways, shots and queries must be at least 1".into()));
        }
        self.pseudo.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub miou: f64,
    pub per_class_iou: BTreeMap<ClassId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EvalConfig,
    /// Checksum of the encoder, absent when raw features are compared.
    pub encoder: Option<String>,
    pub runs: Vec<RunResult>,
    pub mean_miou: f64,
    /// Sample standard deviation over runs (0 for a single run).
    pub std_miou: f64,
}

/// One segmented query image.
#[derive(Debug, Clone)]
pub struct QueryPrediction {
    pub sample_id: String,
    pub predicted: SemanticMask,
    /// Ground truth restricted to the roster, when the sample has one.
    pub truth: Option<SemanticMask>,
}

const RUN_STREAM: u64 = 0x5E7;
const PIXEL_STREAM: u64 = 0x9A1;

/// Segments every query of `episode` from its support set.
pub fn predict_episode(
    dataset: &Dataset,
    params: Option<&EncoderParams>,
    episode: &Episode,
    masks: &MaskSource<'_>,
    config: &EvalConfig,
    seed: u64,
) -> Result<Vec<QueryPrediction>> {
    let support = episode
        .support
        .iter()
        .map(|rec| {
            Ok(LabeledMap {
                features: dataset.load_features(rec)?,
                mask: masks.mask_for(rec)?.restrict_to(&episode.class_roster),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = EpisodeBatch {
        class_roster: episode.class_roster.clone(),
        support,
        query: Vec::new(),
    };
    let index = build_support_index(params, &batch, config.n_pix, derive_seed(seed, PIXEL_STREAM), config.metric)?;
    episode
        .query
        .iter()
        .map(|rec| {
            let features = dataset.load_features(rec)?;
            let predicted = segment_query(params, &index, &features, config.k)?;
            let truth = dataset
                .load_gt_mask(rec)?
                .map(|m| m.restrict_to(&episode.class_roster));
            Ok(QueryPrediction {
                sample_id: rec.id.clone(),
                predicted,
                truth,
            })
        })
        .collect()
}

fn evaluate_episode(
    dataset: &Dataset,
    params: Option<&EncoderParams>,
    masks: &MaskSource<'_>,
    config: &EvalConfig,
    seed: u64,
) -> Result<IoUAccumulator> {
    let episode = sample_episode(&dataset.samples, &dataset.split, SplitSide::Novel, config.shape, seed)?;
    let classes: BTreeSet<ClassId> = episode.class_roster.iter().copied().chain([BACKGROUND]).collect();
    let mut acc = IoUAccumulator::new(classes);
    for q in predict_episode(dataset, params, &episode, masks, config, seed)? {
        let truth = q
            .truth
            .ok_or_else(|| Error::Validation(format!("query sample {} has no ground-truth mask", q.sample_id)))?;
        acc.update(&q.predicted, &truth)?;
    }
    Ok(acc)
}

/// Runs `config.runs` independent runs of `config.episodes` novel-class episodes.
///
/// The report depends only on the dataset, the encoder and `config`.
pub fn run_protocol(dataset: &Dataset, params: Option<&EncoderParams>, config: &EvalConfig) -> Result<RunReport> {
    config.validate()?;
    let masks = MaskSource::new(dataset, config.supervision, config.pseudo);
    let mut runs = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let run_seed = derive_seed(config.seed, RUN_STREAM.wrapping_add(r as u64));
        let per_episode = (0..config.episodes)
            .into_par_iter()
            .map(|e| evaluate_episode(dataset, params, &masks, config, derive_seed(run_seed, e as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut total = IoUAccumulator::default();
        for acc in &per_episode {
            total.merge(acc);
        }
        let miou = match config.averaging {
            Averaging::Accumulated => total.mean_iou()?,
            Averaging::PerEpisode => {
                let scores = per_episode.iter().map(|a| a.mean_iou()).collect::<Result<Vec<_>>>()?;
                scores.iter().sum::<f64>() / scores.len() as f64
            }
        };
        log::info!("run {}/{}: mIoU {miou:.4}", r + 1, config.runs);
        runs.push(RunResult {
            seed: run_seed,
            miou,
            per_class_iou: total.per_class_iou(),
        });
    }
    let n = runs.len() as f64;
    let mean_miou = runs.iter().map(|r| r.miou).sum::<f64>() / n;
    let std_miou = if runs.len() > 1 {
        (runs.iter().map(|r| (r.miou - mean_miou).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunReport {
        config: config.clone(),
        encoder: params.map(|p| p.checksum()),
        runs,
        mean_miou,
        std_miou,
    })
}
