//! Synthetic datasets with known ground truth.
//!
//! Each image holds one or more rectangular blobs on background. Pixel
//! features are isotropic Gaussians around a per-label mean that lives in a
//! low-dimensional signal subspace, optionally shifted by a per-image offset.
//! Heatmaps cover most of each object and also fire on a background clutter
//! patch that the saliency map leaves dark. CAM class embeddings are noisy
//! copies of the segmentation class embeddings plus unrelated distractors.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Manifest, ManifestSample, ManifestSplits, SemanticMask, BACKGROUND, IGNORE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tensor::{save_tensor, Tensor};

/// CAM ids for segmentation class `c` are `CAM_OFFSET + c`; distractors follow.
pub const CAM_OFFSET: ClassId = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Segmentation classes, excluding background.
    pub n_classes: usize,
    /// The highest `n_novel` class ids form the novel split.
    pub n_novel: usize,
    /// Images whose primary object belongs to each class.
    pub samples_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    /// Leading feature dimensions carrying the label signal.
    pub signal_dim: usize,
    /// Norm of each label mean.
    pub class_separation: f32,
    /// Per-dimension standard deviation of pixel noise.
    pub noise: f32,
    /// Per-image offset along a few fixed random directions, as a multiple
    /// of `noise`. Zero keeps every label an isotropic Gaussian.
    pub nuisance: f32,
    pub nuisance_rank: usize,
    /// Fraction of object pixels on which the matching heatmap fires strongly.
    pub cam_coverage: f64,
    /// Saliency is the foreground indicator moved toward 0.5 by up to this much.
    pub saliency_noise: f32,
    pub embedding_dim: usize,
    /// Cosine-ish closeness of a CAM twin to its class embedding, in (0, 1].
    pub twin_fidelity: f32,
    pub n_distractor_cams: usize,
    /// Probability of a second blob of the primary class.
    pub extra_blob_prob: f64,
    /// Probability of an additional object of another class from the same split side.
    pub mixed_class_prob: f64,
    /// Probability that an image's object borders are marked ignore.
    pub ignore_border_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 7,
            n_novel: 2,
            samples_per_class: 24,
            height: 16,
            width: 16,
            feature_dim: 32,
            signal_dim: 6,
            class_separation: 1.0,
            noise: 0.15,
            nuisance: 0.0,
            nuisance_rank: 2,
            cam_coverage: 0.85,
            saliency_noise: 0.55,
            embedding_dim: 16,
            twin_fidelity: 0.9,
            n_distractor_cams: 3,
            extra_blob_prob: 0.3,
            mixed_class_prob: 0.0,
            ignore_border_prob: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height * self.width < 4 {
            return fail(format!("image {}x{} has fewer than 4 pixels", self.height, self.width));
        }
        if self.height < 3 || self.width < 3 {
            return fail("images must be at least 3x3".into());
        }
        if self.feature_dim < 2 {
            return fail(format!("feature_dim {} must be at least 2", self.feature_dim));
        }
        if !(self.cam_coverage > 0.0 && self.cam_coverage <= 1.0) {
            return fail(format!("cam_coverage {} must be in (0, 1]", self.cam_coverage));
        }
        if self.signal_dim == 0 || self.signal_dim > self.feature_dim {
            return fail(format!(
                "signal_dim {} must be in 1..={}",
                self.signal_dim, self.feature_dim
            ));
        }
        if self.n_novel == 0 || self.n_novel >= self.n_classes {
            return fail(format!(
                "need at least one base and one novel class (classes {}, novel {})",
                self.n_classes, self.n_novel
            ));
        }
        if self.n_classes + self.n_distractor_cams >= (u16::MAX - CAM_OFFSET) as usize
            || self.n_classes >= CAM_OFFSET as usize
        {
            return fail(format!("too many classes: {}", self.n_classes));
        }
        if self.samples_per_class < 2 {
            return fail("samples_per_class must be at least 2".into());
        }
        if self.embedding_dim < 2 {
            return fail("embedding_dim must be at least 2".into());
        }
        if !(self.twin_fidelity > 0.0 && self.twin_fidelity <= 1.0) {
            return fail("twin_fidelity must be in (0, 1]".into());
        }
        for (name, v) in [("noise", self.noise), ("nuisance", self.nuisance), ("class_separation", self.class_separation)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.saliency_noise) {
            return fail("saliency_noise must be in [0, 1]".into());
        }
        for (name, p) in [
            ("extra_blob_prob", self.extra_blob_prob),
            ("mixed_class_prob", self.mixed_class_prob),
            ("ignore_border_prob", self.ignore_border_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be a probability"));
            }
        }
        Ok(())
    }

    pub fn base_classes(&self) -> Vec<ClassId> {
        (1..=(self.n_classes - self.n_novel) as ClassId).collect()
    }

    pub fn novel_classes(&self) -> Vec<ClassId> {
        ((self.n_classes - self.n_novel + 1) as ClassId..=self.n_classes as ClassId).collect()
    }
}

fn gaussian(rng: &mut Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect()
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn random(rng: &mut Rng, height: usize, width: usize, min_frac: f64, max_frac: f64) -> Self {
        let side = |rng: &mut Rng, n: usize| {
            let lo = ((n as f64 * min_frac).round() as usize).max(1);
            let hi = ((n as f64 * max_frac).round() as usize).clamp(lo, n);
            rng.random_range(lo..=hi)
        };
        let h = side(rng, height);
        let w = side(rng, width);
        Self {
            top: rng.random_range(0..=height - h),
            left: rng.random_range(0..=width - w),
            h,
            w,
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.top + self.h && c >= self.left && c < self.left + self.w
    }
}

/// Class geometry shared by every image.
struct World {
    /// Signal-space mean per label, background included.
    means: BTreeMap<ClassId, Vec<f32>>,
    /// Unit directions of the per-image offset.
    nuisance_dirs: Vec<Vec<f32>>,
    /// Embedding rows: segmentation classes ascending, then CAM classes ascending.
    embeddings: Vec<Vec<f32>>,
    cam_ids: Vec<ClassId>,
}

fn build_world(cfg: &SynthConfig, rng: &mut Rng) -> World {
    let mut means = BTreeMap::new();
    for label in 0..=cfg.n_classes as ClassId {
        let v = unit(gaussian(rng, cfg.signal_dim, 1.0));
        means.insert(label, v.into_iter().map(|x| x * cfg.class_separation).collect());
    }
    let nuisance_dirs = (0..cfg.nuisance_rank)
        .map(|_| unit(gaussian(rng, cfg.feature_dim, 1.0)))
        .collect();
    let class_emb: Vec<Vec<f32>> = (0..cfg.n_classes)
        .map(|_| unit(gaussian(rng, cfg.embedding_dim, 1.0)))
        .collect();
    let mut embeddings = class_emb.clone();
    let mut cam_ids = Vec::new();
    let spread = (1.0 - cfg.twin_fidelity) / cfg.twin_fidelity;
    for (i, e) in class_emb.iter().enumerate() {
        let noise = unit(gaussian(rng, cfg.embedding_dim, 1.0));
        embeddings.push(unit(e.iter().zip(&noise).map(|(a, b)| a + spread * b).collect()));
        cam_ids.push(CAM_OFFSET + i as ClassId + 1);
    }
    for j in 0..cfg.n_distractor_cams {
        embeddings.push(unit(gaussian(rng, cfg.embedding_dim, 1.0)));
        cam_ids.push(CAM_OFFSET + (cfg.n_classes + j) as ClassId + 1);
    }
    World {
        means,
        nuisance_dirs,
        embeddings,
        cam_ids,
    }
}

struct SynthSample {
    labels: BTreeSet<ClassId>,
    features: Vec<f32>,
    heatmaps: Vec<f32>,
    saliency: Vec<f32>,
    gt: Vec<ClassId>,
}

fn render_sample(cfg: &SynthConfig, world: &World, primary: ClassId, side: &[ClassId], rng: &mut Rng) -> SynthSample {
    let (h, w, d, s) = (cfg.height, cfg.width, cfg.feature_dim, cfg.signal_dim);
    let n = h * w;
    let mut truth = vec![BACKGROUND; n];
    let first = Rect::random(rng, h, w, 0.35, 0.65);
    paint(&mut truth, w, first, primary);

    if rng.random_bool(cfg.extra_blob_prob) {
        paint(&mut truth, w, Rect::random(rng, h, w, 0.2, 0.35), primary);
    }
    let others: Vec<ClassId> = side.iter().copied().filter(|&c| c != primary).collect();
    if !others.is_empty() && rng.random_bool(cfg.mixed_class_prob) {
        let second_class = others[rng.random_range(0..others.len())];
        let second = Rect::random(rng, h, w, 0.25, 0.45);
        let mut trial = truth.clone();
        paint(&mut trial, w, second, second_class);
        if trial.iter().filter(|&&l| l == primary).count() * 2 >= first.h * first.w {
            truth = trial;
        }
    }
    let labels: BTreeSet<ClassId> = truth.iter().copied().filter(|&l| l != BACKGROUND).collect();

    // features
    let mut offset = vec![0.0f32; d];
    for dir in &world.nuisance_dirs {
        let a = rng.sample::<f32, _>(StandardNormal) * cfg.nuisance * cfg.noise;
        offset.iter_mut().zip(dir).for_each(|(o, v)| *o += a * v);
    }
    let mut features = Vec::with_capacity(n * d);
    for &label in &truth {
        let noise = gaussian(rng, d, cfg.noise);
        let mean = &world.means[&label];
        for j in 0..d {
            let base = if j < s { mean[j] } else { 0.0 };
            features.push(base + offset[j] + noise[j]);
        }
    }

    // a background patch that draws heatmap activation but not saliency
    let clutter = Rect::random(rng, h, w, 0.15, 0.3);
    let clutter_at = |i: usize| truth[i] == BACKGROUND && clutter.contains(i / w, i % w);

    let mut heatmaps = Vec::with_capacity(world.cam_ids.len() * n);
    for &cam in &world.cam_ids {
        let twin_of = cam - CAM_OFFSET;
        let is_distractor = twin_of as usize > cfg.n_classes;
        let present = labels.contains(&twin_of);
        let blob = Rect::random(rng, h, w, 0.2, 0.4);
        for i in 0..n {
            let v = if present && truth[i] == twin_of {
                if rng.random_bool(cfg.cam_coverage) {
                    rng.random_range(0.6..1.0)
                } else {
                    rng.random_range(0.2..0.5)
                }
            } else if present && clutter_at(i) {
                rng.random_range(0.55..0.9)
            } else if is_distractor && blob.contains(i / w, i % w) {
                rng.random_range(0.3..0.7)
            } else {
                rng.random_range(0.0..0.15)
            };
            heatmaps.push(v);
        }
    }

    let saliency = (0..n)
        .map(|i| {
            let jitter = rng.random_range(0.0..=cfg.saliency_noise);
            if truth[i] != BACKGROUND {
                1.0 - jitter
            } else {
                jitter
            }
        })
        .collect();

    let mut gt = truth.clone();
    if rng.random_bool(cfg.ignore_border_prob) {
        for r in 0..h {
            for c in 0..w {
                let l = truth[r * w + c];
                if l == BACKGROUND {
                    continue;
                }
                let differs = |rr: isize, cc: isize| {
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && truth[rr as usize * w + cc as usize] != l
                };
                let (ri, ci) = (r as isize, c as isize);
                if differs(ri - 1, ci) || differs(ri + 1, ci) || differs(ri, ci - 1) || differs(ri, ci + 1) {
                    gt[r * w + c] = IGNORE;
                }
            }
        }
    }

    SynthSample {
        labels,
        features,
        heatmaps,
        saliency,
        gt,
    }
}

fn paint(mask: &mut [ClassId], width: usize, rect: Rect, label: ClassId) {
    for r in rect.top..rect.top + rect.h {
        for c in rect.left..rect.left + rect.w {
            mask[r * width + c] = label;
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes tensors, embeddings and `manifest.json` under `out_dir`.
/// Identical configs produce byte-identical files.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    for sub in ["features", "heatmaps", "saliency", "masks"] {
        mkdir(&out_dir.join(sub))?;
    }
    let mut world_rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let world = build_world(cfg, &mut world_rng);
    let (h, w) = (cfg.height, cfg.width);
    let base = cfg.base_classes();
    let novel = cfg.novel_classes();

    let mut samples = Vec::new();
    for class in 1..=cfg.n_classes as ClassId {
        let side = if base.contains(&class) { &base } else { &novel };
        for j in 0..cfg.samples_per_class {
            let id = format!("c{class:02}_{j:03}");
            let mut rng = rng_from_seed(derive_seed(cfg.seed, ((class as u64) << 32) | j as u64 | 1 << 48));
            let s = render_sample(cfg, &world, class, side, &mut rng);
            let rel = |dir: &str| format!("{dir}/{id}.pxt");
            save_tensor(&Tensor::from_f32(vec![h, w, cfg.feature_dim], s.features)?, out_dir.join(rel("features")))?;
            save_tensor(
                &Tensor::from_f32(vec![world.cam_ids.len(), h, w], s.heatmaps)?,
                out_dir.join(rel("heatmaps")),
            )?;
            save_tensor(&Tensor::from_f32(vec![h, w], s.saliency)?, out_dir.join(rel("saliency")))?;
            SemanticMask::new(h, w, s.gt)?
                .to_tensor()
                .and_then(|t| save_tensor(&t, out_dir.join(rel("masks"))))?;
            samples.push(ManifestSample {
                id: id.clone(),
                labels: s.labels.into_iter().collect(),
                features: rel("features"),
                heatmaps: rel("heatmaps"),
                saliency: rel("saliency"),
                gt_mask: Some(rel("masks")),
            });
        }
    }

    let rows = world.embeddings.len();
    let flat: Vec<f32> = world.embeddings.concat();
    save_tensor(&Tensor::from_f32(vec![rows, cfg.embedding_dim], flat)?, out_dir.join("embeddings.pxt"))?;

    let classes = (1..=cfg.n_classes as ClassId).map(|c| (c, format!("class_{c}"))).collect();
    let cam_classes = world
        .cam_ids
        .iter()
        .map(|&id| {
            let name = if ((id - CAM_OFFSET) as usize) <= cfg.n_classes {
                format!("cam_class_{}", id - CAM_OFFSET)
            } else {
                format!("cam_distractor_{}", id - CAM_OFFSET - cfg.n_classes as ClassId)
            };
            (id, name)
        })
        .collect();
    let manifest = Manifest {
        classes,
        cam_classes,
        embedding_path: "embeddings.pxt".into(),
        embedding_rows: None,
        splits: ManifestSplits { base, novel },
        samples,
        metadata: Some(serde_json::json!({ "generator": "pixelmeta synth", "config": cfg })),
    };
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;

    fn small() -> SynthConfig {
        SynthConfig {
            n_classes: 3,
            n_novel: 1,
            samples_per_class: 3,
            height: 8,
            width: 8,
            feature_dim: 6,
            signal_dim: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn loads_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(&small(), dir.path()).unwrap();
        let ds = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.samples.len(), 9);
        assert_eq!(ds.cam_classes.len(), 3 + 3);
        for rec in &ds.samples {
            let data = ds.load_sample(rec).unwrap();
            let gt = data.gt_mask.unwrap();
            for l in &rec.labels {
                assert!(gt.labels.contains(l) || gt.labels.contains(&IGNORE));
            }
            assert!(gt.labels.iter().all(|l| *l == BACKGROUND || *l == IGNORE || rec.labels.contains(l)));
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(&small(), a.path()).unwrap();
        generate_synthetic_dataset(&small(), b.path()).unwrap();
        for f in ["manifest.json", "embeddings.pxt", "features/c01_000.pxt", "heatmaps/c03_002.pxt", "masks/c02_001.pxt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn labels_stay_on_one_split_side() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            mixed_class_prob: 1.0,
            ..small()
        };
        let m = generate_synthetic_dataset(&cfg, dir.path()).unwrap();
        for s in &m.samples {
            let novel = s.labels.iter().filter(|l| m.splits.novel.contains(l)).count();
            assert!(novel == 0 || novel == s.labels.len(), "{:?}", s.labels);
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        for cfg in [
            SynthConfig { height: 1, width: 3, ..small() },
            SynthConfig { feature_dim: 1, signal_dim: 1, ..small() },
            SynthConfig { n_novel: 3, ..small() },
            SynthConfig { noise: f32::NAN, ..small() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
