//! Pseudo pixel-level masks from image-level labels.
//!
//! For each image-level class, CAM heatmaps of semantically related CAM
//! classes are fused with word-embedding weights, min-max normalized, gated by
//! a class-agnostic saliency map and thresholded. Overlapping classes resolve
//! by per-pixel argmax.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    ClassId, Dataset, EmbeddingTable, HeatmapStack, SaliencyMap, SampleRecord, SemanticMask,
    BACKGROUND, IGNORE,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    /// Saliency values at or above this keep the heatmap value.
    pub saliency_threshold: f32,
    /// Threshold on the normalized fused heatmap.
    pub mask_threshold: f32,
    pub use_saliency: bool,
    /// Floor on the cosine distance before inversion.
    pub weight_epsilon: f32,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            saliency_threshold: 0.5,
            mask_threshold: 0.5,
            use_saliency: true,
            weight_epsilon: 1e-6,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("saliency_threshold", self.saliency_threshold),
            ("mask_threshold", self.mask_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.weight_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "weight_epsilon must be > 0, got {}",
                self.weight_epsilon
            )));
        }
        Ok(())
    }
}

/// Normalized per-CAM-class weights for one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub target_class: ClassId,
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedHeatmap {
    pub target_class: ClassId,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("zero-norm embedding in cosine similarity".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// `w_k = 1 / max(eps, 1 - cos(pi(c), pi(c_k)))`, normalized to sum to one.
pub fn compute_class_weights(
    target: ClassId,
    embeddings: &EmbeddingTable,
    cam_class_ids: &[ClassId],
    epsilon: f32,
) -> Result<ClassWeights> {
    if cam_class_ids.is_empty() {
        return Err(Error::Config("no CAM classes to weight".into()));
    }
    let lookup = |id: ClassId| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no embedding for class {id}")))
    };
    let anchor = lookup(target)?;
    let eps = epsilon as f64;
    let raw = cam_class_ids
        .iter()
        .map(|&k| Ok(1.0 / (1.0 - cosine(anchor, lookup(k)?)?).max(eps)))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = raw.iter().sum();
    Ok(ClassWeights {
        target_class: target,
        weights: raw.iter().map(|w| (w / total) as f32).collect(),
    })
}

/// Weighted sum of the CAM maps.
pub fn fuse_heatmaps(weights: &ClassWeights, heatmaps: &HeatmapStack) -> Result<WeightedHeatmap> {
    if weights.weights.len() != heatmaps.n_cam() {
        return Err(Error::Shape(format!(
            "{} weights for {} heatmaps",
            weights.weights.len(),
            heatmaps.n_cam()
        )));
    }
    let n = heatmaps.height * heatmaps.width;
    let mut acc = vec![0.0f64; n];
    for (k, &w) in weights.weights.iter().enumerate() {
        for (a, &t) in acc.iter_mut().zip(heatmaps.map(k)) {
            *a += w as f64 * t as f64;
        }
    }
    Ok(WeightedHeatmap {
        target_class: weights.target_class,
        height: heatmaps.height,
        width: heatmaps.width,
        values: acc.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect(),
    })
}

/// Rescales to `[0, 1]` over the image. A constant map is returned unchanged.
pub fn normalize_min_max(heatmap: &WeightedHeatmap) -> WeightedHeatmap {
    let (lo, hi) = heatmap
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = heatmap.clone();
    let range = hi - lo;
    if range > f32::EPSILON {
        for v in &mut out.values {
            *v = ((*v - lo) / range).clamp(0.0, 1.0);
        }
    }
    out
}

/// Hard gate: keeps a value where saliency is at least `threshold`, zero elsewhere.
pub fn apply_saliency_gate(
    heatmap: &WeightedHeatmap,
    saliency: &SaliencyMap,
    threshold: f32,
) -> Result<WeightedHeatmap> {
    if (heatmap.height, heatmap.width) != (saliency.height, saliency.width) {
        return Err(Error::Shape(format!(
            "heatmap {}x{} vs saliency {}x{}",
            heatmap.height, heatmap.width, saliency.height, saliency.width
        )));
    }
    let mut out = heatmap.clone();
    for (v, &s) in out.values.iter_mut().zip(&saliency.values) {
        if s < threshold {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Per pixel, the class with the largest value wins if that value reaches `tau`.
/// Ties go to the lower class id.
pub fn heatmaps_to_mask(per_class: &[WeightedHeatmap], tau: f32) -> Result<SemanticMask> {
    let first = per_class
        .first()
        .ok_or_else(|| Error::Config("no heatmaps to convert".into()))?;
    let (h, w) = (first.height, first.width);
    let mut order: Vec<&WeightedHeatmap> = per_class.iter().collect();
    order.sort_by_key(|m| m.target_class);
    for pair in order.windows(2) {
        if pair[0].target_class == pair[1].target_class {
            return Err(Error::Config(format!(
                "duplicate class {} in heatmap list",
                pair[0].target_class
            )));
        }
    }
    if let Some(m) = order.iter().find(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::Shape(format!(
            "heatmap for class {} is {}x{}, expected {h}x{w}",
            m.target_class, m.height, m.width
        )));
    }

    let labels = (0..h * w)
        .map(|i| {
            let mut best = (BACKGROUND, f32::NEG_INFINITY);
            for m in &order {
                if m.values[i] > best.1 {
                    best = (m.target_class, m.values[i]);
                }
            }
            if best.1 >= tau {
                best.0
            } else {
                BACKGROUND
            }
        })
        .collect();
    SemanticMask::new(h, w, labels)
}

/// Full pipeline for one image from already-loaded tensors.
pub fn pseudo_mask_from_parts(
    labels: impl IntoIterator<Item = ClassId>,
    heatmaps: &HeatmapStack,
    saliency: &SaliencyMap,
    embeddings: &EmbeddingTable,
    config: &PseudoLabelConfig,
) -> Result<SemanticMask> {
    config.validate()?;
    let per_class = labels
        .into_iter()
        .map(|c| {
            let weights = compute_class_weights(
                c,
                embeddings,
                &heatmaps.cam_class_ids,
                config.weight_epsilon,
            )?;
            let fused = normalize_min_max(&fuse_heatmaps(&weights, heatmaps)?);
            if config.use_saliency {
                apply_saliency_gate(&fused, saliency, config.saliency_threshold)
            } else {
                Ok(fused)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    heatmaps_to_mask(&per_class, config.mask_threshold)
}

/// Pseudo mask for a sample from its image-level labels.
pub fn generate_pseudo_mask(
    dataset: &Dataset,
    sample: &SampleRecord,
    config: &PseudoLabelConfig,
) -> Result<SemanticMask> {
    let heatmaps = dataset.load_heatmaps(sample)?;
    let saliency = dataset.load_saliency(sample)?;
    pseudo_mask_from_parts(
        sample.labels.iter().copied(),
        &heatmaps,
        &saliency,
        &dataset.embeddings,
        config,
    )
}

/// Where training and support masks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Pseudo masks generated from image-level labels.
    #[default]
    Weak,
    /// Ground-truth masks.
    Full,
}

impl std::str::FromStr for Supervision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "weak" => Ok(Supervision::Weak),
            "full" => Ok(Supervision::Full),
            other => Err(format!("unknown supervision {other:?} (expected weak|full)")),
        }
    }
}

/// Supplies one mask per sample according to the supervision mode and
/// memoizes the result for the lifetime of the source.
#[derive(Debug)]
pub struct MaskSource<'a> {
    dataset: &'a Dataset,
    supervision: Supervision,
    config: PseudoLabelConfig,
    cache: Mutex<HashMap<String, Arc<SemanticMask>>>,
}

impl<'a> MaskSource<'a> {
    pub fn new(dataset: &'a Dataset, supervision: Supervision, config: PseudoLabelConfig) -> Self {
        Self {
            dataset,
            supervision,
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn mask_for(&self, sample: &SampleRecord) -> Result<Arc<SemanticMask>> {
        if let Some(m) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&sample.id) {
            return Ok(m.clone());
        }
        let mask = match self.supervision {
            Supervision::Weak => generate_pseudo_mask(self.dataset, sample, &self.config)?,
            Supervision::Full => self.dataset.load_gt_mask(sample)?.ok_or_else(|| {
                Error::Validation(format!(
                    "sample {} has no ground-truth mask (required for full supervision)",
                    sample.id
                ))
            })?,
        };
        let mask = Arc::new(mask);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(sample.id.clone(), mask.clone());
        Ok(mask)
    }
}

/// Foreground agreement of a pseudo mask with ground truth, over non-ignore pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskQuality {
    pub foreground_pixels: usize,
    pub true_positive: usize,
    pub truth_foreground: usize,
    pub precision: f64,
    pub recall: f64,
}

impl MaskQuality {
    /// A foreground pixel counts as correct only when its class matches.
    pub fn measure(pseudo: &SemanticMask, truth: &SemanticMask) -> Result<Self> {
        if (pseudo.height, pseudo.width) != (truth.height, truth.width) {
            return Err(Error::Shape("pseudo mask and truth differ in size".into()));
        }
        let (mut fg, mut tp, mut gt_fg) = (0usize, 0usize, 0usize);
        for (&p, &t) in pseudo.labels.iter().zip(&truth.labels) {
            if t == IGNORE {
                continue;
            }
            let p_fg = p != BACKGROUND && p != IGNORE;
            fg += p_fg as usize;
            gt_fg += (t != BACKGROUND) as usize;
            tp += (p_fg && p == t) as usize;
        }
        Ok(Self::from_counts(fg, tp, gt_fg))
    }

    pub fn from_counts(foreground_pixels: usize, true_positive: usize, truth_foreground: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            foreground_pixels,
            true_positive,
            truth_foreground,
            precision: ratio(true_positive, foreground_pixels),
            recall: ratio(true_positive, truth_foreground),
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(
            self.foreground_pixels + other.foreground_pixels,
            self.true_positive + other.true_positive,
            self.truth_foreground + other.truth_foreground,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    fn table(entries: &[(ClassId, Vec<f32>)]) -> EmbeddingTable {
        let dim = entries[0].1.len();
        EmbeddingTable::new(dim, entries.iter().cloned().collect::<BTreeMap<_, _>>()).unwrap()
    }

    fn hm(class: ClassId, w: usize, values: Vec<f32>) -> WeightedHeatmap {
        WeightedHeatmap {
            target_class: class,
            height: 1,
            width: w,
            values,
        }
    }

    #[test]
    fn weights_worked_example() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let t = table(&[(1, vec![1.0, 0.0]), (10, vec![s, s]), (11, vec![0.0, 1.0])]);
        let w = compute_class_weights(1, &t, &[10, 11], 1e-6).unwrap();
        // raw (2 + sqrt 2, 1): hand computation
        let raw0 = 1.0 / (1.0 - 0.5f64.sqrt());
        let expect0 = raw0 / (raw0 + 1.0);
        assert!((w.weights[0] as f64 - expect0).abs() < 1e-6);
        assert!((w.weights[0] - 0.7735).abs() < 1e-4);
        assert!((w.weights[1] - 0.2265).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_pair_is_even() {
        let t = table(&[(1, vec![1.0, 0.0, 0.0]), (10, vec![0.0, 1.0, 0.0]), (11, vec![0.0, 0.0, 2.0])]);
        let w = compute_class_weights(1, &t, &[10, 11], 1e-6).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn single_cam_class_gets_everything() {
        let t = table(&[(1, vec![1.0, 0.3]), (10, vec![-0.2, 1.0])]);
        let w = compute_class_weights(1, &t, &[10], 1e-6).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn identical_embedding_is_guarded() {
        let t = table(&[(1, vec![1.0, 0.0]), (10, vec![3.0, 0.0]), (11, vec![0.0, 1.0])]);
        let w = compute_class_weights(1, &t, &[10, 11], 1e-6).unwrap();
        assert!(w.weights.iter().all(|v| v.is_finite()));
        assert!(w.weights[0] > 0.999);
    }

    #[test]
    fn weight_errors() {
        let t = table(&[(1, vec![1.0, 0.0])]);
        assert!(matches!(compute_class_weights(1, &t, &[], 1e-6), Err(Error::Config(_))));
        assert!(compute_class_weights(1, &t, &[5], 1e-6).is_err());
    }

    #[test]
    fn fuse_one_hot_and_arithmetic() {
        let stack = HeatmapStack::new(1, 2, vec![10, 11], vec![0.4, 0.1, 0.8, 0.9]).unwrap();
        let one_hot = ClassWeights {
            target_class: 1,
            weights: vec![1.0, 0.0],
        };
        assert_eq!(fuse_heatmaps(&one_hot, &stack).unwrap().values, vec![0.4, 0.1]);
        let w = ClassWeights {
            target_class: 1,
            weights: vec![0.25, 0.75],
        };
        let fused = fuse_heatmaps(&w, &stack).unwrap();
        assert!((fused.values[0] - 0.7).abs() < 1e-6);
        let bad = ClassWeights {
            target_class: 1,
            weights: vec![1.0],
        };
        assert!(matches!(fuse_heatmaps(&bad, &stack), Err(Error::Shape(_))));
    }

    #[test]
    fn fuse_identical_maps() {
        let stack = HeatmapStack::new(1, 2, vec![10, 11], vec![0.3, 0.6, 0.3, 0.6]).unwrap();
        let w = ClassWeights {
            target_class: 1,
            weights: vec![0.9, 0.1],
        };
        let fused = fuse_heatmaps(&w, &stack).unwrap();
        assert!((fused.values[0] - 0.3).abs() < 1e-6 && (fused.values[1] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn gate_open_closed_checkerboard() {
        let t = WeightedHeatmap {
            target_class: 1,
            height: 2,
            width: 2,
            values: vec![0.2, 0.4, 0.6, 0.8],
        };
        let open = SaliencyMap::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(apply_saliency_gate(&t, &open, 0.5).unwrap(), t);
        let closed = SaliencyMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(apply_saliency_gate(&t, &closed, 0.5).unwrap().values, vec![0.0; 4]);
        let checker = SaliencyMap::new(2, 2, vec![1.0, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(
            apply_saliency_gate(&t, &checker, 0.5).unwrap().values,
            vec![0.2, 0.0, 0.0, 0.8]
        );
        let wrong = SaliencyMap::new(1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(apply_saliency_gate(&t, &wrong, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_threshold_and_argmax() {
        let low = hm(3, 3, vec![0.1, 0.2, 0.3]);
        assert_eq!(heatmaps_to_mask(&[low], 0.5).unwrap().labels, vec![0, 0, 0]);
        let one = hm(3, 3, vec![0.1, 0.9, 0.3]);
        assert_eq!(heatmaps_to_mask(&[one], 0.5).unwrap().labels, vec![0, 3, 0]);
        let a = hm(2, 1, vec![0.8]);
        let b = hm(5, 1, vec![0.6]);
        assert_eq!(heatmaps_to_mask(&[b.clone(), a.clone()], 0.5).unwrap().labels, vec![2]);
        let tie = hm(5, 1, vec![0.8]);
        assert_eq!(heatmaps_to_mask(&[tie, a.clone()], 0.5).unwrap().labels, vec![2]);
        assert!(matches!(heatmaps_to_mask(&[a.clone(), a], 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_handles_constant() {
        let flat = hm(1, 3, vec![0.4; 3]);
        assert_eq!(normalize_min_max(&flat), flat);
        let ramp = normalize_min_max(&hm(1, 3, vec![0.2, 0.3, 0.4]));
        assert!((ramp.values[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn quality_counts() {
        let p = SemanticMask::new(1, 4, vec![1, 1, 0, 2]).unwrap();
        let t = SemanticMask::new(1, 4, vec![1, 0, 1, IGNORE]).unwrap();
        let q = MaskQuality::measure(&p, &t).unwrap();
        assert_eq!((q.foreground_pixels, q.true_positive, q.truth_foreground), (2, 1, 2));
        assert_eq!(q.precision, 0.5);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, Vec<Vec<f32>>, Vec<f32>)> {
        (2usize..5, 2usize..4).prop_flat_map(|(n_cam, dim)| {
            (
                prop::collection::vec(prop::collection::vec(0.1f32..1.0, dim), n_cam),
                prop::collection::vec(0.1f32..1.0, dim),
                prop::collection::vec(prop::collection::vec(0.0f32..=1.0, 9), n_cam),
                prop::collection::vec(0.0f32..=1.0, 9),
            )
        })
    }

    fn build(cams: &[Vec<f32>], target: &[f32], maps: &[Vec<f32>]) -> (EmbeddingTable, HeatmapStack) {
        let mut entries: BTreeMap<ClassId, Vec<f32>> = BTreeMap::from([(1, target.to_vec())]);
        let ids: Vec<ClassId> = (0..cams.len() as u16).map(|k| 100 + k).collect();
        for (id, v) in ids.iter().zip(cams) {
            entries.insert(*id, v.clone());
        }
        let table = EmbeddingTable::new(target.len(), entries).unwrap();
        let stack = HeatmapStack::new(3, 3, ids, maps.concat()).unwrap();
        (table, stack)
    }

    proptest! {
        #[test]
        fn weights_scale_invariant((cams, target, _m, _s) in arb_case(), lambda in 0.01f32..100.0, which in 0usize..4) {
            let ids: Vec<ClassId> = (0..cams.len() as u16).map(|k| 100 + k).collect();
            let (t1, _) = build(&cams, &target, &vec![vec![0.0; 9]; cams.len()]);
            let mut scaled = cams.clone();
            let k = which % cams.len();
            scaled[k] = scaled[k].iter().map(|x| x * lambda).collect();
            let (t2, _) = build(&scaled, &target, &vec![vec![0.0; 9]; cams.len()]);
            let a = compute_class_weights(1, &t1, &ids, 1e-6).unwrap();
            let b = compute_class_weights(1, &t2, &ids, 1e-6).unwrap();
            let sum: f32 = a.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn fusion_is_convex((cams, target, maps, _s) in arb_case()) {
            let (table, stack) = build(&cams, &target, &maps);
            let w = compute_class_weights(1, &table, &stack.cam_class_ids, 1e-6).unwrap();
            let fused = fuse_heatmaps(&w, &stack).unwrap();
            for i in 0..9 {
                let lo = maps.iter().map(|m| m[i]).fold(f32::INFINITY, f32::min);
                let hi = maps.iter().map(|m| m[i]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(fused.values[i] >= lo - 1e-6 && fused.values[i] <= hi + 1e-6);
            }
        }

        #[test]
        fn gating_only_shrinks((cams, target, maps, sal) in arb_case(), tau in 0.0f32..=1.0, theta in 0.0f32..=1.0) {
            let (table, stack) = build(&cams, &target, &maps);
            let saliency = SaliencyMap::new(3, 3, sal).unwrap();
            let cfg = PseudoLabelConfig { mask_threshold: tau, saliency_threshold: theta, ..Default::default() };
            let gated = pseudo_mask_from_parts([1], &stack, &saliency, &table, &cfg).unwrap();
            let open = pseudo_mask_from_parts([1], &stack, &saliency, &table, &PseudoLabelConfig { use_saliency: false, ..cfg }).unwrap();
            for i in 0..9 {
                if gated.labels[i] != BACKGROUND {
                    prop_assert_eq!(open.labels[i], gated.labels[i]);
                    prop_assert!(saliency.values[i] >= theta);
                }
            }
        }

        #[test]
        fn threshold_extremes(values in prop::collection::vec(0.0f32..=1.0, 1..20)) {
            let n = values.len();
            let m = hm(4, n, values);
            prop_assert!(heatmaps_to_mask(&[m.clone()], 0.0).unwrap().labels.iter().all(|&l| l == 4));
            prop_assert!(heatmaps_to_mask(&[m], 1.01).unwrap().labels.iter().all(|&l| l == 0));
        }

        #[test]
        fn cam_order_does_not_matter((cams, target, maps, sal) in arb_case(), rot in 1usize..4) {
            let (table, stack) = build(&cams, &target, &maps);
            let saliency = SaliencyMap::new(3, 3, sal).unwrap();
            let cfg = PseudoLabelConfig::default();
            let a = pseudo_mask_from_parts([1], &stack, &saliency, &table, &cfg).unwrap();
            let n = stack.n_cam();
            let perm: Vec<usize> = (0..n).map(|k| (k + rot) % n).collect();
            let ids: Vec<ClassId> = perm.iter().map(|&k| stack.cam_class_ids[k]).collect();
            let permuted_maps: Vec<f32> = perm.iter().flat_map(|&k| stack.map(k).to_vec()).collect();
            let stack2 = HeatmapStack::new(3, 3, ids, permuted_maps).unwrap();
            let b = pseudo_mask_from_parts([1], &stack2, &saliency, &table, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
