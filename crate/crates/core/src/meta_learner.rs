//! Pixel-level prototypical meta-learning.
//!
//! Support pixels are sampled per class from (pseudo) masks, embedded by the
//! encoder and averaged into one prototype per class, background included.
//! Query pixels are scored against the prototype of their own label and the
//! encoder is trained by SGD with momentum on the resulting loss.
//!
//! Two objectives are available:
//! - [`LossVariant::Similarity`]: `L = -mean_l exp(-d(E(x_l), p_{y_l}))`, pooled over
//!   all labeled query pixels. This is the default.
//! - [`LossVariant::SoftmaxCe`]: cross-entropy of the softmax over negative
//!   distances to every prototype.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::dataset::{ClassId, Dataset, FeatureMap, SemanticMask, SplitSide, IGNORE};
use crate::encoder::{Encoder, EncoderDims, EncoderParams, Scalar};
use crate::episode::{sample_episode, Episode, EpisodeShape};
use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::pseudo_label::{MaskSource, PseudoLabelConfig, Supervision};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossVariant {
    #[default]
    #[serde(rename = "similarity")]
    Similarity,
    #[serde(rename = "softmax")]
    SoftmaxCe,
}

impl std::str::FromStr for LossVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(LossVariant::Similarity),
            "softmax" => Ok(LossVariant::SoftmaxCe),
            other => Err(format!("unknown loss {other:?} (expected similarity|softmax)")),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Similarity => "similarity",
            LossVariant::SoftmaxCe => "softmax",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Objective {
    pub metric: Metric,
    pub loss: LossVariant,
}

/// Labeled pixel feature vectors, stored row-major `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSampleSet {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<ClassId>,
}

impl PixelSampleSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, feature: &[f32], label: ClassId) {
        debug_assert_eq!(feature.len(), self.dim);
        self.features.extend_from_slice(feature);
        self.labels.push(label);
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn extend(&mut self, other: &PixelSampleSet) {
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn counts(&self) -> BTreeMap<ClassId, usize> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }

    pub fn features_as<T: Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.len(), self.dim), |(i, j)| {
            T::from_f32(self.features[i * self.dim + j]).unwrap()
        })
    }
}

fn check_grid(features: &FeatureMap, mask: &SemanticMask) -> Result<()> {
    if (features.height, features.width) != (mask.height, mask.width) {
        return Err(Error::Shape(format!(
            "features {}x{} vs mask {}x{}",
            features.height, features.width, mask.height, mask.width
        )));
    }
    Ok(())
}

/// Pixel positions of every non-ignore label, in raster order.
fn positions_by_label(mask: &SemanticMask) -> BTreeMap<ClassId, Vec<usize>> {
    let mut by_label: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in mask.labels.iter().enumerate() {
        if l != IGNORE {
            by_label.entry(l).or_default().push(i);
        }
    }
    by_label
}

/// Uniformly samples up to `n_pix` pixels of each label present in `mask`,
/// without replacement. Ignore pixels are never sampled.
pub fn sample_pixels(
    features: &FeatureMap,
    mask: &SemanticMask,
    n_pix: usize,
    seed: u64,
) -> Result<PixelSampleSet> {
    check_grid(features, mask)?;
    let by_label = positions_by_label(mask);
    if by_label.is_empty() {
        return Err(Error::EmptySample("every pixel of the mask is ignore".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = PixelSampleSet::new(features.channels);
    for (label, positions) in by_label {
        let take = positions.len().min(n_pix);
        for i in index::sample(&mut rng, positions.len(), take) {
            out.push(features.pixel(positions[i]), label);
        }
    }
    Ok(out)
}

/// Every non-ignore pixel, in raster order.
pub fn all_labeled_pixels(features: &FeatureMap, mask: &SemanticMask) -> Result<PixelSampleSet> {
    check_grid(features, mask)?;
    let mut out = PixelSampleSet::new(features.channels);
    for (i, &l) in mask.labels.iter().enumerate() {
        if l != IGNORE {
            out.push(features.pixel(i), l);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySample("every pixel of the mask is ignore".into()));
    }
    Ok(out)
}

/// One prototype per class, rows of `vectors` follow `classes` (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T = f32> {
    pub classes: Vec<ClassId>,
    pub vectors: Array2<T>,
}

impl<T: Scalar> PrototypeSet<T> {
    pub fn get(&self, class: ClassId) -> Option<ndarray::ArrayView1<'_, T>> {
        self.classes
            .binary_search(&class)
            .ok()
            .map(|i| self.vectors.row(i))
    }
}

/// Per-class means of embedding rows. Returns the prototypes and the class count per row.
fn class_means<T: Scalar>(embedded: &Array2<T>, labels: &[ClassId]) -> (PrototypeSet<T>, Vec<usize>) {
    let counts_map = {
        let mut m = BTreeMap::new();
        for &l in labels {
            *m.entry(l).or_insert(0usize) += 1;
        }
        m
    };
    let classes: Vec<ClassId> = counts_map.keys().copied().collect();
    let counts: Vec<usize> = counts_map.values().copied().collect();
    let mut vectors = Array2::zeros((classes.len(), embedded.ncols()));
    for (row, &l) in embedded.rows().into_iter().zip(labels) {
        let slot = classes.binary_search(&l).expect("class collected above");
        vectors.row_mut(slot).zip_mut_with(&row, |t, &x| *t = *t + x);
    }
    for (mut row, &n) in vectors.rows_mut().into_iter().zip(&counts) {
        let n = T::from_usize(n).unwrap();
        row.mapv_inplace(|x| x / n);
    }
    (PrototypeSet { classes, vectors }, counts)
}

/// Mean embedding of the support entries of each class.
pub fn compute_prototypes<T: Scalar>(
    params: &Encoder<T>,
    support: &PixelSampleSet,
) -> Result<PrototypeSet<T>> {
    if support.is_empty() {
        return Err(Error::EmptySample("support set is empty".into()));
    }
    check_input_dim(params, support)?;
    let embedded = params.encode_batch(support.features_as::<T>().view());
    Ok(class_means(&embedded, &support.labels).0)
}

fn check_input_dim<T: Scalar>(params: &Encoder<T>, set: &PixelSampleSet) -> Result<()> {
    let d = params.dims().input;
    if set.dim != d {
        return Err(Error::Shape(format!(
            "pixel features have {} channels, encoder expects {d}",
            set.dim
        )));
    }
    Ok(())
}

fn row<T>(a: &Array2<T>, i: usize) -> &[T] {
    a.row(i).to_slice().expect("standard layout")
}

fn evaluate<T: Scalar>(
    params: &Encoder<T>,
    support: &PixelSampleSet,
    query: &PixelSampleSet,
    objective: Objective,
    want_grad: bool,
) -> Result<(T, Option<Encoder<T>>)> {
    if support.is_empty() {
        return Err(Error::EmptySample("support set is empty".into()));
    }
    if query.is_empty() {
        return Err(Error::EmptySample("query set has no labeled pixels".into()));
    }
    check_input_dim(params, support)?;
    check_input_dim(params, query)?;

    let fwd_s = params.forward(support.features_as::<T>().view());
    let fwd_q = params.forward(query.features_as::<T>().view());
    let (protos, counts) = class_means(&fwd_s.output, &support.labels);
    let slots = query
        .labels
        .iter()
        .map(|&c| {
            protos
                .classes
                .binary_search(&c)
                .map_err(|_| Error::MissingPrototype(c))
        })
        .collect::<Result<Vec<usize>>>()?;

    let n_query = T::from_usize(query.len()).unwrap();
    let n_class = protos.classes.len();
    let metric = objective.metric;
    let mut loss = T::zero();
    // dL/dD for every (query pixel, prototype) pair
    let mut d_dist = Array2::<T>::zeros((query.len(), n_class));
    for (j, &own) in slots.iter().enumerate() {
        let q = row(&fwd_q.output, j);
        match objective.loss {
            LossVariant::Similarity => {
                let sim = (-metric.distance(q, row(&protos.vectors, own))).exp();
                loss = loss - sim / n_query;
                d_dist[[j, own]] = sim / n_query;
            }
            LossVariant::SoftmaxCe => {
                let dists: Vec<T> = (0..n_class)
                    .map(|c| metric.distance(q, row(&protos.vectors, c)))
                    .collect();
                let shift = dists.iter().copied().fold(T::infinity(), T::min);
                let weights: Vec<T> = dists.iter().map(|&d| (shift - d).exp()).collect();
                let total = weights.iter().copied().fold(T::zero(), |a, b| a + b);
                let log_sum = total.ln() - shift;
                loss = loss + (dists[own] + log_sum) / n_query;
                for c in 0..n_class {
                    let target = if c == own { T::one() } else { T::zero() };
                    d_dist[[j, c]] = (target - weights[c] / total) / n_query;
                }
            }
        }
    }
    if !want_grad {
        return Ok((loss, None));
    }

    let z = params.dims().output;
    let mut g_query = Array2::<T>::zeros((query.len(), z));
    let mut g_proto = Array2::<T>::zeros((n_class, z));
    for j in 0..query.len() {
        let q = row(&fwd_q.output, j);
        for c in 0..n_class {
            let scale = d_dist[[j, c]];
            if scale == T::zero() {
                continue;
            }
            let mut gq = g_query.row_mut(j);
            let mut gp = g_proto.row_mut(c);
            metric.accumulate_gradient(
                q,
                row(&protos.vectors, c),
                scale,
                gq.as_slice_mut().expect("standard layout"),
                gp.as_slice_mut().expect("standard layout"),
            );
        }
    }
    // each support embedding receives its prototype's gradient divided by the class count
    let mut g_support = Array2::<T>::zeros((support.len(), z));
    for (i, &l) in support.labels.iter().enumerate() {
        let slot = protos.classes.binary_search(&l).expect("support class");
        let inv = T::one() / T::from_usize(counts[slot]).unwrap();
        g_support.row_mut(i).assign(&(&g_proto.row(slot) * inv));
    }
    let mut grad = params.backward(&fwd_s, g_support.view());
    grad.add_scaled(T::one(), &params.backward(&fwd_q, g_query.view()));
    Ok((loss, Some(grad)))
}

/// Loss of the query pixels against prototypes computed from `support` through `params`.
pub fn meta_loss<T: Scalar>(
    params: &Encoder<T>,
    support: &PixelSampleSet,
    query: &PixelSampleSet,
    objective: Objective,
) -> Result<T> {
    evaluate(params, support, query, objective, false).map(|(l, _)| l)
}

/// Loss and its exact gradient with respect to every encoder parameter,
/// including the dependence of the prototypes on the parameters.
pub fn loss_gradient<T: Scalar>(
    params: &Encoder<T>,
    support: &PixelSampleSet,
    query: &PixelSampleSet,
    objective: Objective,
) -> Result<(T, Encoder<T>)> {
    evaluate(params, support, query, objective, true).map(|(l, g)| (l, g.expect("requested")))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub episodes: usize,
    /// Support pixels sampled per class and image.
    pub n_pix: usize,
    /// Query pixels sampled per class and image; `None` uses every labeled pixel.
    pub query_n_pix: Option<usize>,
    pub metric: Metric,
    pub loss: LossVariant,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output_dim: usize,
    pub shape: EpisodeShape,
    pub supervision: Supervision,
    pub pseudo: PseudoLabelConfig,
    pub seed: u64,
    /// Episodes between checkpoints; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            episodes: 2000,
            n_pix: 100,
            query_n_pix: None,
            metric: Metric::SquaredEuclidean,
            loss: LossVariant::Similarity,
            hidden1: 128,
            hidden2: 128,
            output_dim: 64,
            shape: EpisodeShape::new(1, 1),
            supervision: Supervision::Weak,
            pseudo: PseudoLabelConfig::default(),
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.n_pix == 0 || self.query_n_pix == Some(0) {
            return Err(Error::Config("pixel sample counts must be at least 1".into()));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 || self.output_dim == 0 {
            return Err(Error::Config("encoder layer sizes must be at least 1".into()));
        }
        self.pseudo.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            metric: self.metric,
            loss: self.loss,
        }
    }

    pub fn encoder_dims(&self, input: usize) -> EncoderDims {
        EncoderDims::new(input, self.hidden1, self.hidden2, self.output_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Pre-step loss of every episode.
    pub losses: Vec<f32>,
    pub wall_time_secs: f64,
    pub params_checksum: String,
}

/// Features and a label mask for one image.
#[derive(Debug, Clone)]
pub struct LabeledMap {
    pub features: FeatureMap,
    pub mask: SemanticMask,
}

/// Loaded tensors for one episode, masks restricted to the episode roster.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub class_roster: Vec<ClassId>,
    pub support: Vec<LabeledMap>,
    pub query: Vec<LabeledMap>,
}

impl EpisodeBatch {
    /// Loads features for every episode sample and masks from `masks`.
    /// Labels outside the roster become background.
    pub fn load(dataset: &Dataset, episode: &Episode, masks: &MaskSource<'_>) -> Result<Self> {
        let load = |rec| -> Result<LabeledMap> {
            let features = dataset.load_features(rec)?;
            let mask = masks.mask_for(rec)?.restrict_to(&episode.class_roster);
            check_grid(&features, &mask)?;
            Ok(LabeledMap { features, mask })
        };
        Ok(Self {
            class_roster: episode.class_roster.clone(),
            support: episode.support.iter().map(load).collect::<Result<_>>()?,
            query: episode.query.iter().map(load).collect::<Result<_>>()?,
        })
    }

    /// Support and query pixel sets for one training step.
    pub fn pixel_sets(
        &self,
        n_pix: usize,
        query_n_pix: Option<usize>,
        seed: u64,
    ) -> Result<(PixelSampleSet, PixelSampleSet)> {
        let dim = self
            .support
            .first()
            .map(|m| m.features.channels)
            .ok_or_else(|| Error::EmptySample("episode has no support images".into()))?;
        let mut support = PixelSampleSet::new(dim);
        for (i, m) in self.support.iter().enumerate() {
            support.extend(&sample_pixels(&m.features, &m.mask, n_pix, derive_seed(seed, i as u64))?);
        }
        let mut query = PixelSampleSet::new(dim);
        for (i, m) in self.query.iter().enumerate() {
            let set = match query_n_pix {
                Some(n) => sample_pixels(&m.features, &m.mask, n, derive_seed(seed, (1 << 32) + i as u64))?,
                None => all_labeled_pixels(&m.features, &m.mask)?,
            };
            query.extend(&set);
        }
        Ok((support, query))
    }
}

/// Encoder parameters plus SGD momentum state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: EncoderParams,
    velocity: EncoderParams,
    pub config: TrainConfig,
}

const INIT_STREAM: u64 = 0x1A17;

impl Trainer {
    pub fn new(input_dim: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = Encoder::init(config.encoder_dims(input_dim), derive_seed(config.seed, INIT_STREAM));
        Ok(Self::from_params(params, config))
    }

    pub fn from_params(params: EncoderParams, config: TrainConfig) -> Self {
        let velocity = Encoder::zeros(params.dims());
        Self {
            params,
            velocity,
            config,
        }
    }

    /// One momentum SGD step (`v = mu v + g`, `theta -= lr v`); returns the pre-step loss.
    pub fn step(&mut self, support: &PixelSampleSet, query: &PixelSampleSet) -> Result<f32> {
        let (loss, grad) = loss_gradient(&self.params, support, query, self.config.objective())?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Numeric(format!("non-finite loss or gradient (loss {loss})")));
        }
        self.velocity.scale(self.config.momentum);
        self.velocity.add_scaled(1.0, &grad);
        self.params.add_scaled(-self.config.learning_rate, &self.velocity);
        Ok(loss)
    }

    /// Samples pixels from the episode and takes one step on them.
    pub fn train_episode(&mut self, batch: &EpisodeBatch, seed: u64) -> Result<f32> {
        let (support, query) = batch.pixel_sets(self.config.n_pix, self.config.query_n_pix, seed)?;
        self.step(&support, &query)
    }
}

const EPISODE_STREAM: u64 = 0xE915;
const PIXEL_STREAM: u64 = 0x91C5;

/// Episodic meta-training on the base split.
///
/// With `checkpoint_dir`, parameters are checkpointed every
/// `config.checkpoint_every` episodes and after the last one.
pub fn meta_train(
    dataset: &Dataset,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(EncoderParams, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let input_dim = feature_dim(dataset)?;
    let mut trainer = Trainer::new(input_dim, config.clone())?;
    let masks = MaskSource::new(dataset, config.supervision, config.pseudo);
    let episode_seed = derive_seed(config.seed, EPISODE_STREAM);
    let pixel_seed = derive_seed(config.seed, PIXEL_STREAM);

    let save = |params: &EncoderParams, episode: usize| -> Result<()> {
        if let Some(dir) = checkpoint_dir {
            let meta = CheckpointMeta::new(params, config.metric, episode, serde_json::to_value(config).ok());
            save_checkpoint(dir, params, &meta)?;
        }
        Ok(())
    };

    let mut losses = Vec::with_capacity(config.episodes);
    for e in 0..config.episodes {
        let episode = sample_episode(
            &dataset.samples,
            &dataset.split,
            SplitSide::Base,
            config.shape,
            derive_seed(episode_seed, e as u64),
        )?;
        let batch = EpisodeBatch::load(dataset, &episode, &masks)?;
        let loss = trainer.train_episode(&batch, derive_seed(pixel_seed, e as u64))?;
        losses.push(loss);
        if config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0 && e + 1 < config.episodes {
            save(&trainer.params, e + 1)?;
        }
        if (e + 1) % 250 == 0 {
            log::info!("episode {}/{}: loss {loss:.5}", e + 1, config.episodes);
        }
    }
    save(&trainer.params, config.episodes)?;

    let report = TrainReport {
        config: config.clone(),
        losses,
        wall_time_secs: started.elapsed().as_secs_f64(),
        params_checksum: trainer.params.checksum(),
    };
    Ok((trainer.params, report))
}

/// Channel count of the dataset's feature maps, read from the first base sample.
fn feature_dim(dataset: &Dataset) -> Result<usize> {
    let rec = dataset
        .samples
        .iter()
        .find(|r| r.labels.iter().any(|c| dataset.split.base.contains(c)))
        .ok_or_else(|| Error::Validation("no sample carries a base class".into()))?;
    Ok(dataset.load_features(rec)?.channels)
}
