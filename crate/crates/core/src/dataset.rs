//! On-disk data model: per-sample tensors, the manifest and the loaded dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_tensor, Tensor};

pub type ClassId = u16;

pub const BACKGROUND: ClassId = 0;
pub const IGNORE: ClassId = u16::MAX;

/// Per-pixel backbone features, stored `H x W x d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (shape, values) = t
            .into_f32()
            .ok_or_else(|| Error::Validation("feature tensor must be f32".into()))?;
        if shape.len() != 3 {
            return Err(Error::Shape(format!("feature tensor must be rank 3, got {shape:?}")));
        }
        Self::new(shape[0], shape[1], shape[2], values)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_f32(
            vec![self.height, self.width, self.channels],
            self.values.clone(),
        )
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }
}

/// Per-class activation maps, stored `N_CAM x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub height: usize,
    pub width: usize,
    pub cam_class_ids: Vec<ClassId>,
    pub maps: Vec<f32>,
}

impl HeatmapStack {
    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(
        height: usize,
        width: usize,
        cam_class_ids: Vec<ClassId>,
        mut maps: Vec<f32>,
    ) -> Result<Self> {
        if maps.len() != cam_class_ids.len() * height * width {
            return Err(Error::Shape(format!(
                "heatmap stack {}x{height}x{width} needs {} values, got {}",
                cam_class_ids.len(),
                cam_class_ids.len() * height * width,
                maps.len()
            )));
        }
        for v in &mut maps {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            cam_class_ids,
            maps,
        })
    }

    pub fn n_cam(&self) -> usize {
        self.cam_class_ids.len()
    }

    pub fn map(&self, k: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.maps[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(height: usize, width: usize, mut values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }
}

/// Integer label field. 0 is background, [`IGNORE`] marks void pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<ClassId>,
}

impl SemanticMask {
    pub fn new(height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: ClassId) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (shape, labels) = t
            .into_u16()
            .ok_or_else(|| Error::Validation("mask tensor must be u16".into()))?;
        if shape.len() != 2 {
            return Err(Error::Shape(format!("mask tensor must be rank 2, got {shape:?}")));
        }
        Self::new(shape[0], shape[1], labels)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_u16(vec![self.height, self.width], self.labels.clone())
    }

    pub fn count(&self, label: ClassId) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Labels outside `keep` (other than background and ignore) become background.
    pub fn restrict_to(&self, keep: &[ClassId]) -> SemanticMask {
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == IGNORE || l == BACKGROUND || keep.contains(&l) {
                    l
                } else {
                    BACKGROUND
                }
            })
            .collect();
        SemanticMask {
            height: self.height,
            width: self.width,
            labels,
        }
    }
}

/// Word embedding vectors for segmentation and CAM classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: BTreeMap<ClassId, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: BTreeMap<ClassId, Vec<f32>>) -> Result<Self> {
        for (id, v) in &entries {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding for class {id} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("embedding for class {id} is not finite")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Numeric(format!("embedding for class {id} has zero norm")));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn get(&self, id: ClassId) -> Option<&[f32]> {
        self.entries.get(&id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub labels: BTreeSet<ClassId>,
    pub features: PathBuf,
    pub heatmaps: PathBuf,
    pub saliency: PathBuf,
    pub gt_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Base,
    Novel,
}

impl std::fmt::Display for SplitSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitSide::Base => f.write_str("base"),
            SplitSide::Novel => f.write_str("novel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub base: BTreeSet<ClassId>,
    pub novel: BTreeSet<ClassId>,
}

impl SplitSpec {
    pub fn new(base: BTreeSet<ClassId>, novel: BTreeSet<ClassId>) -> Result<Self> {
        if let Some(c) = base.intersection(&novel).next() {
            return Err(Error::Validation(format!("split overlap: {c}")));
        }
        Ok(Self { base, novel })
    }

    pub fn side(&self, side: SplitSide) -> &BTreeSet<ClassId> {
        match side {
            SplitSide::Base => &self.base,
            SplitSide::Novel => &self.novel,
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplits {
    pub base: Vec<ClassId>,
    pub novel: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub labels: Vec<ClassId>,
    pub features: String,
    pub heatmaps: String,
    pub saliency: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<String>,
}

/// The JSON manifest as written on disk. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: BTreeMap<ClassId, String>,
    pub cam_classes: BTreeMap<ClassId, String>,
    pub embedding_path: String,
    /// Row of the embedding matrix for each class id. When absent, rows follow
    /// segmentation classes in ascending id order, then CAM classes in ascending id order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_rows: Option<BTreeMap<ClassId, usize>>,
    pub splits: ManifestSplits,
    pub samples: Vec<ManifestSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Manifest {
    pub fn default_embedding_rows(&self) -> BTreeMap<ClassId, usize> {
        self.classes
            .keys()
            .chain(self.cam_classes.keys())
            .enumerate()
            .map(|(row, &id)| (id, row))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Loaded dataset
// ---------------------------------------------------------------------------

/// A validated, immutable view of a dataset on disk.
///
/// Per-sample tensors are read lazily. An optional access log records every
/// sample whose tensors are read, for auditing split hygiene.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: BTreeMap<ClassId, String>,
    pub cam_classes: BTreeMap<ClassId, String>,
    pub samples: Vec<SampleRecord>,
    pub split: SplitSpec,
    pub embeddings: EmbeddingTable,
    index: HashMap<String, usize>,
    access_log: Option<Mutex<Vec<String>>>,
}

/// All tensors for one sample, validated to share one `H x W` grid.
#[derive(Debug, Clone)]
pub struct SampleData {
    pub features: FeatureMap,
    pub heatmaps: HeatmapStack,
    pub saliency: SaliencyMap,
    pub gt_mask: Option<SemanticMask>,
}

fn valid_class_id(id: ClassId) -> bool {
    id != BACKGROUND && id != IGNORE
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("manifest {}: {e}", path.display())))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Dataset::from_manifest(manifest, root)
}

impl Dataset {
    pub fn from_manifest(manifest: Manifest, root: PathBuf) -> Result<Self> {
        if manifest.classes.is_empty() {
            return Err(Error::Validation("manifest declares no classes".into()));
        }
        for &id in manifest.classes.keys().chain(manifest.cam_classes.keys()) {
            if !valid_class_id(id) {
                return Err(Error::Validation(format!(
                    "class id {id} is reserved (0 = background, {IGNORE} = ignore)"
                )));
            }
        }
        if let Some(id) = manifest
            .cam_classes
            .keys()
            .find(|id| manifest.classes.contains_key(id))
        {
            return Err(Error::Validation(format!(
                "cam class {id} collides with a segmentation class"
            )));
        }

        let base: BTreeSet<ClassId> = manifest.splits.base.iter().copied().collect();
        let novel: BTreeSet<ClassId> = manifest.splits.novel.iter().copied().collect();
        let split = SplitSpec::new(base, novel)?;
        for id in split.base.iter().chain(split.novel.iter()) {
            if !manifest.classes.contains_key(id) {
                return Err(Error::Validation(format!("split references unknown class {id}")));
            }
        }

        let resolve = |rel: &str| -> Result<PathBuf> {
            let p = root.join(rel);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Validation(format!("missing file: {}", p.display())))
            }
        };

        let mut samples = Vec::with_capacity(manifest.samples.len());
        let mut index = HashMap::new();
        for s in &manifest.samples {
            if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id.starts_with('.') {
                return Err(Error::Validation(format!("invalid sample id {:?}", s.id)));
            }
            if s.labels.is_empty() {
                return Err(Error::Validation(format!("sample {} has no labels", s.id)));
            }
            if let Some(c) = s.labels.iter().find(|c| !manifest.classes.contains_key(c)) {
                return Err(Error::Validation(format!("sample {} has unknown class id {c}", s.id)));
            }
            if index.insert(s.id.clone(), samples.len()).is_some() {
                return Err(Error::Validation(format!("duplicate sample id {}", s.id)));
            }
            samples.push(SampleRecord {
                id: s.id.clone(),
                labels: s.labels.iter().copied().collect(),
                features: resolve(&s.features)?,
                heatmaps: resolve(&s.heatmaps)?,
                saliency: resolve(&s.saliency)?,
                gt_mask: s.gt_mask.as_deref().map(resolve).transpose()?,
            });
        }

        let embeddings = load_embeddings(&manifest, &root)?;
        Ok(Self {
            root,
            classes: manifest.classes,
            cam_classes: manifest.cam_classes,
            samples,
            split,
            embeddings,
            index,
            access_log: None,
        })
    }

    /// Starts recording every sample whose tensors are read.
    pub fn enable_access_log(&mut self) {
        self.access_log = Some(Mutex::new(Vec::new()));
    }

    pub fn accessed_samples(&self) -> Vec<String> {
        self.access_log
            .as_ref()
            .map(|log| log.lock().unwrap_or_else(|e| e.into_inner()).clone())
            .unwrap_or_default()
    }

    fn record_access(&self, rec: &SampleRecord) {
        if let Some(log) = &self.access_log {
            log.lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(rec.id.clone());
        }
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn cam_class_ids(&self) -> Vec<ClassId> {
        self.cam_classes.keys().copied().collect()
    }

    pub fn load_features(&self, rec: &SampleRecord) -> Result<FeatureMap> {
        self.record_access(rec);
        FeatureMap::from_tensor(load_tensor(&rec.features)?)
    }

    pub fn load_heatmaps(&self, rec: &SampleRecord) -> Result<HeatmapStack> {
        self.record_access(rec);
        let (shape, maps) = load_tensor(&rec.heatmaps)?
            .into_f32()
            .ok_or_else(|| Error::Validation(format!("heatmaps of {} must be f32", rec.id)))?;
        if shape.len() != 3 || shape[0] != self.cam_classes.len() {
            return Err(Error::Shape(format!(
                "heatmaps of {} have shape {shape:?}, expected [{}, H, W]",
                rec.id,
                self.cam_classes.len()
            )));
        }
        HeatmapStack::new(shape[1], shape[2], self.cam_class_ids(), maps)
    }

    pub fn load_saliency(&self, rec: &SampleRecord) -> Result<SaliencyMap> {
        self.record_access(rec);
        let (shape, values) = load_tensor(&rec.saliency)?
            .into_f32()
            .ok_or_else(|| Error::Validation(format!("saliency of {} must be f32", rec.id)))?;
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "saliency of {} must be rank 2, got {shape:?}",
                rec.id
            )));
        }
        SaliencyMap::new(shape[0], shape[1], values)
    }

    /// Ground-truth mask, or `None` when the sample has none.
    pub fn load_gt_mask(&self, rec: &SampleRecord) -> Result<Option<SemanticMask>> {
        let Some(path) = &rec.gt_mask else {
            return Ok(None);
        };
        self.record_access(rec);
        let mask = SemanticMask::from_tensor(load_tensor(path)?)?;
        if let Some(&l) = mask
            .labels
            .iter()
            .find(|&&l| l != BACKGROUND && l != IGNORE && !self.classes.contains_key(&l))
        {
            return Err(Error::Validation(format!(
                "mask of {} contains unregistered label {l}",
                rec.id
            )));
        }
        Ok(Some(mask))
    }

    /// Loads every tensor of a sample and checks they share one grid.
    pub fn load_sample(&self, rec: &SampleRecord) -> Result<SampleData> {
        let features = self.load_features(rec)?;
        let heatmaps = self.load_heatmaps(rec)?;
        let saliency = self.load_saliency(rec)?;
        let gt_mask = self.load_gt_mask(rec)?;
        let grid = (features.height, features.width);
        let mut grids = vec![
            ("heatmaps", (heatmaps.height, heatmaps.width)),
            ("saliency", (saliency.height, saliency.width)),
        ];
        if let Some(m) = &gt_mask {
            grids.push(("gt_mask", (m.height, m.width)));
        }
        for (what, g) in grids {
            if g != grid {
                return Err(Error::Shape(format!(
                    "sample {}: {what} grid {g:?} differs from feature grid {grid:?}",
                    rec.id
                )));
            }
        }
        Ok(SampleData {
            features,
            heatmaps,
            saliency,
            gt_mask,
        })
    }
}

fn load_embeddings(manifest: &Manifest, root: &Path) -> Result<EmbeddingTable> {
    let path = root.join(&manifest.embedding_path);
    if !path.is_file() {
        return Err(Error::Validation(format!("missing file: {}", path.display())));
    }
    let (shape, values) = load_tensor(&path)?
        .into_f32()
        .ok_or_else(|| Error::Validation("embedding table must be f32".into()))?;
    if shape.len() != 2 {
        return Err(Error::Shape(format!("embedding table must be rank 2, got {shape:?}")));
    }
    let (rows, dim) = (shape[0], shape[1]);
    let mapping = manifest
        .embedding_rows
        .clone()
        .unwrap_or_else(|| manifest.default_embedding_rows());

    let mut entries = BTreeMap::new();
    for &id in manifest.classes.keys().chain(manifest.cam_classes.keys()) {
        let row = *mapping
            .get(&id)
            .ok_or_else(|| Error::Validation(format!("no embedding row for class {id}")))?;
        if row >= rows {
            return Err(Error::Validation(format!(
                "embedding row {row} for class {id} exceeds table with {rows} rows"
            )));
        }
        entries.insert(id, values[row * dim..(row + 1) * dim].to_vec());
    }
    EmbeddingTable::new(dim, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::save_tensor;

    struct Fixture {
        dir: tempfile::TempDir,
        manifest: Manifest,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::from_f32(vec![2, 2, 3], vec![0.1; 12]).unwrap();
        let h = Tensor::from_f32(vec![1, 2, 2], vec![0.5; 4]).unwrap();
        let s = Tensor::from_f32(vec![2, 2], vec![1.0; 4]).unwrap();
        let m = Tensor::from_u16(vec![2, 2], vec![0, 1, 1, IGNORE]).unwrap();
        let e = Tensor::from_f32(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        for (name, t) in [("f.pxt", f), ("h.pxt", h), ("s.pxt", s), ("m.pxt", m), ("e.pxt", e)] {
            save_tensor(&t, dir.path().join(name)).unwrap();
        }
        let manifest = Manifest {
            classes: BTreeMap::from([(1, "horse".into()), (2, "bottle".into())]),
            cam_classes: BTreeMap::from([(100, "zebra".into())]),
            embedding_path: "e.pxt".into(),
            embedding_rows: None,
            splits: ManifestSplits {
                base: vec![1],
                novel: vec![2],
            },
            samples: vec![ManifestSample {
                id: "a".into(),
                labels: vec![1],
                features: "f.pxt".into(),
                heatmaps: "h.pxt".into(),
                saliency: "s.pxt".into(),
                gt_mask: Some("m.pxt".into()),
            }],
            metadata: None,
        };
        Fixture { dir, manifest }
    }

    fn load(fx: &Fixture) -> Result<Dataset> {
        let path = fx.dir.path().join("manifest.json");
        fx.manifest.write(&path).unwrap();
        load_manifest(path)
    }

    #[test]
    fn loads_two_class_table() {
        let fx = fixture();
        let ds = load(&fx).unwrap();
        assert_eq!(ds.classes.len(), 2);
        assert_eq!(ds.classes[&1], "horse");
        assert_eq!(ds.split.base, BTreeSet::from([1]));
        assert_eq!(ds.embeddings.get(100), Some(&[1.0f32, 1.0][..]));
        let data = ds.load_sample(&ds.samples[0]).unwrap();
        assert_eq!(data.gt_mask.unwrap().labels[3], IGNORE);
    }

    #[test]
    fn split_overlap_is_named() {
        let mut fx = fixture();
        fx.manifest.classes.insert(3, "cat".into());
        fx.manifest.splits.base.push(3);
        fx.manifest.splits.novel.push(3);
        let err = load(&fx).unwrap_err();
        assert!(err.to_string().contains("split overlap: 3"), "{err}");
    }

    #[test]
    fn unknown_sample_class() {
        let mut fx = fixture();
        fx.manifest.samples[0].labels.push(9);
        let err = load(&fx).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains('9'));
    }

    #[test]
    fn missing_feature_file_names_path() {
        let mut fx = fixture();
        fx.manifest.samples[0].features = "nope.pxt".into();
        let err = load(&fx).unwrap_err();
        assert!(err.to_string().contains("nope.pxt"), "{err}");
    }

    #[test]
    fn cam_ids_must_not_leak_segmentation_ids() {
        let mut fx = fixture();
        fx.manifest.cam_classes.insert(2, "bottle".into());
        assert!(load(&fx).is_err());
    }

    #[test]
    fn zero_norm_embedding_rejected() {
        let fx = fixture();
        let e = Tensor::from_f32(vec![3, 2], vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        save_tensor(&e, fx.dir.path().join("e.pxt")).unwrap();
        assert!(matches!(load(&fx).unwrap_err(), Error::Numeric(_)));
    }

    #[test]
    fn explicit_embedding_rows() {
        let mut fx = fixture();
        fx.manifest.embedding_rows = Some(BTreeMap::from([(1, 2), (2, 1), (100, 0)]));
        let ds = load(&fx).unwrap();
        assert_eq!(ds.embeddings.get(1), Some(&[1.0f32, 1.0][..]));
        assert_eq!(ds.embeddings.get(100), Some(&[1.0f32, 0.0][..]));
    }

    #[test]
    fn access_log_records_reads() {
        let fx = fixture();
        let mut ds = load(&fx).unwrap();
        ds.enable_access_log();
        assert!(ds.accessed_samples().is_empty());
        ds.load_features(&ds.samples[0]).unwrap();
        assert_eq!(ds.accessed_samples(), vec!["a".to_string()]);
    }

    #[test]
    fn heatmaps_are_clamped() {
        let h = HeatmapStack::new(1, 2, vec![7], vec![-0.5, 1.5]).unwrap();
        assert_eq!(h.maps, vec![0.0, 1.0]);
    }

    #[test]
    fn restrict_maps_other_classes_to_background() {
        let m = SemanticMask::new(1, 4, vec![0, 1, 2, IGNORE]).unwrap();
        assert_eq!(m.restrict_to(&[2]).labels, vec![0, 0, 2, IGNORE]);
    }
}
