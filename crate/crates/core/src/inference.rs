//! Pixel-wise k-nearest-neighbour segmentation of query images.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use rayon::prelude::*;

use crate::dataset::{ClassId, FeatureMap, SemanticMask, BACKGROUND};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::meta_learner::{sample_pixels, EpisodeBatch, PixelSampleSet};
use crate::metric::Metric;
use crate::rng::derive_seed;

/// Labelled support vectors, already in the space queries are compared in.
#[derive(Debug, Clone)]
pub struct SupportIndex {
    pub dim: usize,
    pub metric: Metric,
    vectors: Vec<f32>,
    labels: Vec<ClassId>,
}

impl SupportIndex {
    pub fn new(dim: usize, metric: Metric, vectors: Vec<f32>, labels: Vec<ClassId>) -> Result<Self> {
        if dim == 0 || vectors.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} values for {} support vectors of dim {dim}",
                vectors.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptySample("support index is empty".into()));
        }
        Ok(Self {
            dim,
            metric,
            vectors,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }
}

/// Encodes a set of raw pixel features, or passes them through when no encoder is given.
pub fn embed_pixels(params: Option<&EncoderParams>, set: &PixelSampleSet) -> Vec<f32> {
    match params {
        Some(p) => p.encode_batch(set.features_as::<f32>().view()).into_iter().collect(),
        None => set.features.clone(),
    }
}

/// Samples up to `n_pix` pixels per label from every support map and embeds them.
///
/// The index must hold at least one background and one foreground vector.
pub fn build_support_index(
    params: Option<&EncoderParams>,
    batch: &EpisodeBatch,
    n_pix: usize,
    seed: u64,
    metric: Metric,
) -> Result<SupportIndex> {
    let dim = batch
        .support
        .first()
        .map(|m| m.features.channels)
        .ok_or_else(|| Error::EmptySample("episode has no support images".into()))?;
    let mut set = PixelSampleSet::new(dim);
    for (i, m) in batch.support.iter().enumerate() {
        set.extend(&sample_pixels(&m.features, &m.mask, n_pix, derive_seed(seed, i as u64))?);
    }
    let counts = set.counts();
    if !counts.contains_key(&BACKGROUND) {
        return Err(Error::EmptySample("support masks contain no background pixels".into()));
    }
    if counts.keys().all(|&c| c == BACKGROUND) {
        return Err(Error::EmptySample("support masks contain no foreground pixels".into()));
    }
    let out_dim = params.map_or(dim, |p| p.dims().output);
    SupportIndex::new(out_dim, metric, embed_pixels(params, &set), set.labels)
}

/// Majority vote over the `k` nearest support vectors.
///
/// Neighbours are ordered by (distance, label), so the result depends only on
/// the index contents. Vote ties go to the class with the smaller mean
/// neighbour distance, then to the lower class id. `k` larger than the index
/// is clamped.
pub fn knn_classify(index: &SupportIndex, query: &[f32], k: usize) -> Result<ClassId> {
    if query.len() != index.dim {
        return Err(Error::Shape(format!(
            "query has dim {}, index has dim {}",
            query.len(),
            index.dim
        )));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let k = k.min(index.len());
    let mut scored: Vec<(f32, ClassId)> = (0..index.len())
        .map(|i| (index.metric.distance(query, index.vector(i)), index.labels[i]))
        .collect();
    let order = |a: &(f32, ClassId), b: &(f32, ClassId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);

    let mut votes: BTreeMap<ClassId, (usize, f64)> = BTreeMap::new();
    for &(d, label) in &scored {
        let v = votes.entry(label).or_default();
        v.0 += 1;
        v.1 += d as f64;
    }
    let best = votes
        .into_iter()
        .min_by(|(ca, (na, sa)), (cb, (nb, sb))| {
            nb.cmp(na)
                .then_with(|| {
                    (sa / *na as f64)
                        .partial_cmp(&(sb / *nb as f64))
                        .unwrap_or(Ordering::Equal)
                })
                .then(ca.cmp(cb))
        })
        .map(|(c, _)| c)
        .expect("k >= 1 neighbours");
    Ok(best)
}

static CLAMP_REPORTED: AtomicBool = AtomicBool::new(false);

/// Labels every pixel of a query feature map.
pub fn segment_query(
    params: Option<&EncoderParams>,
    index: &SupportIndex,
    features: &FeatureMap,
    k: usize,
) -> Result<SemanticMask> {
    if k > index.len() && !CLAMP_REPORTED.swap(true, AtomicOrdering::Relaxed) {
        log::warn!("k = {k} exceeds the {} support vectors; using {}", index.len(), index.len());
    }
    let n = features.n_pixels();
    let embedded: Vec<f32> = match params {
        Some(p) => {
            if p.dims().input != features.channels {
                return Err(Error::Shape(format!(
                    "encoder expects {} channels, features have {}",
                    p.dims().input,
                    features.channels
                )));
            }
            let view = ndarray::ArrayView2::from_shape((n, features.channels), &features.values)
                .map_err(|e| Error::Shape(e.to_string()))?;
            p.encode_batch(view).into_iter().collect()
        }
        None => features.values.clone(),
    };
    let dim = embedded.len() / n.max(1);
    let labels = embedded
        .par_chunks(dim)
        .map(|q| knn_classify(index, q, k))
        .collect::<Result<Vec<_>>>()?;
    SemanticMask::new(features.height, features.width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::IGNORE;
    use crate::meta_learner::LabeledMap;
    use proptest::prelude::*;

    fn index(points: &[(f32, f32, ClassId)]) -> SupportIndex {
        SupportIndex::new(
            2,
            Metric::SquaredEuclidean,
            points.iter().flat_map(|p| [p.0, p.1]).collect(),
            points.iter().map(|p| p.2).collect(),
        )
        .unwrap()
    }

    #[test]
    fn nearest_neighbour() {
        let idx = index(&[(0.0, 0.0, 0), (5.0, 5.0, 1), (5.0, 6.0, 1)]);
        assert_eq!(knn_classify(&idx, &[0.4, 0.1], 1).unwrap(), 0);
        assert_eq!(knn_classify(&idx, &[4.0, 4.0], 1).unwrap(), 1);
        assert_eq!(knn_classify(&idx, &[0.0, 0.0], 3).unwrap(), 1);
    }

    #[test]
    fn vote_tie_prefers_closer_class() {
        let idx = index(&[(1.0, 0.0, 2), (3.0, 0.0, 2), (-1.5, 0.0, 1), (-1.6, 0.0, 1), (9.0, 0.0, 0)]);
        // two votes each; class 1 averages 1.55, class 2 averages 2.0
        assert_eq!(knn_classify(&idx, &[0.0, 0.0], 4).unwrap(), 1);
    }

    #[test]
    fn exact_tie_prefers_lower_id() {
        let idx = index(&[(1.0, 0.0, 3), (-1.0, 0.0, 2)]);
        assert_eq!(knn_classify(&idx, &[0.0, 0.0], 1).unwrap(), 2);
        assert_eq!(knn_classify(&idx, &[0.0, 0.0], 2).unwrap(), 2);
    }

    #[test]
    fn oversized_k_is_clamped() {
        let idx = index(&[(0.0, 0.0, 0), (1.0, 0.0, 1), (1.1, 0.0, 1)]);
        assert_eq!(knn_classify(&idx, &[0.0, 0.0], 50).unwrap(), 1);
        assert!(knn_classify(&idx, &[0.0, 0.0], 0).is_err());
        assert!(knn_classify(&idx, &[0.0], 1).is_err());
    }

    fn batch(mask: Vec<ClassId>) -> EpisodeBatch {
        let features = FeatureMap::new(1, mask.len(), 1, (0..mask.len()).map(|i| i as f32).collect()).unwrap();
        let mask = SemanticMask::new(1, mask.len(), mask).unwrap();
        EpisodeBatch {
            class_roster: vec![4],
            support: vec![LabeledMap {
                features: features.clone(),
                mask: mask.clone(),
            }],
            query: vec![LabeledMap { features, mask }],
        }
    }

    #[test]
    fn support_index_needs_both_sides() {
        let m = Metric::SquaredEuclidean;
        assert!(build_support_index(None, &batch(vec![0, 0, 4, 4]), 10, 1, m).is_ok());
        assert!(build_support_index(None, &batch(vec![0, 0, IGNORE]), 10, 1, m).is_err());
        assert!(build_support_index(None, &batch(vec![4, 4, IGNORE]), 10, 1, m).is_err());
    }

    #[test]
    fn raw_feature_segmentation() {
        let b = batch(vec![0, 0, 0, 4, 4, 4]);
        let idx = build_support_index(None, &b, 10, 1, Metric::SquaredEuclidean).unwrap();
        assert_eq!(idx.len(), 6);
        let pred = segment_query(None, &idx, &b.query[0].features, 1).unwrap();
        assert_eq!(pred.labels, vec![0, 0, 0, 4, 4, 4]);
    }

    #[test]
    fn exact_hit_and_uniform_labels() {
        let idx = index(&[(0.0, 0.0, 0), (1.0, 1.0, 5), (2.0, 0.5, 0)]);
        assert_eq!(knn_classify(&idx, &[1.0, 1.0], 1).unwrap(), 5);
        let same = index(&[(0.0, 0.0, 3), (9.0, 1.0, 3)]);
        assert_eq!(knn_classify(&same, &[-4.0, 7.0], 2).unwrap(), 3);
    }

    #[test]
    fn index_size_and_raw_dimension() {
        let labels: Vec<ClassId> = (0..256).map(|i| if i < 90 { 4 } else { 0 }).collect();
        let b = batch(labels);
        let idx = build_support_index(None, &b, 100, 9, Metric::SquaredEuclidean).unwrap();
        assert_eq!(idx.len(), 190);
        assert_eq!(idx.dim, 1);
        let again = build_support_index(None, &b, 100, 9, Metric::SquaredEuclidean).unwrap();
        assert_eq!(idx.vectors, again.vectors);
    }

    #[test]
    fn memorizes_fully_sampled_support() {
        let b = batch(vec![0, 4, 4, 0, 0, 4, 0]);
        let idx = build_support_index(None, &b, 100, 2, Metric::SquaredEuclidean).unwrap();
        let pred = segment_query(None, &idx, &b.support[0].features, 1).unwrap();
        assert_eq!(pred.labels, b.support[0].mask.labels);
    }

    proptest! {
        #[test]
        fn support_order_does_not_matter(
            pts in prop::collection::vec((-3i8..3, -3i8..3, 0u16..3), 2..25),
            q in (-3i8..3, -3i8..3),
            k in 1usize..6,
            rot in 0usize..25,
        ) {
            // small integer grid, so exact distance ties are common
            let pts: Vec<(f32, f32, ClassId)> = pts.iter().map(|p| (p.0 as f32, p.1 as f32, p.2)).collect();
            let mut shuffled = pts.clone();
            shuffled.rotate_left(rot % pts.len());
            shuffled.reverse();
            let q = [q.0 as f32, q.1 as f32];
            prop_assert_eq!(
                knn_classify(&index(&pts), &q, k).unwrap(),
                knn_classify(&index(&shuffled), &q, k).unwrap()
            );
        }

        #[test]
        fn prediction_comes_from_index(
            pts in prop::collection::vec((-5.0f32..5.0, -5.0f32..5.0, 0u16..4), 1..30),
            q in (-5.0f32..5.0, -5.0f32..5.0),
            k in 1usize..8,
        ) {
            let idx = index(&pts);
            let label = knn_classify(&idx, &[q.0, q.1], k).unwrap();
            prop_assert!(pts.iter().any(|p| p.2 == label));
        }
    }
}
