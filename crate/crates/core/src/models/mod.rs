//! Adapter boundary for the foundation-model roles: an open-vocabulary
//! detector that proposes box prompts, a promptable segmenter, and a frozen
//! feature extractor.
//!
//! Backends implement the `*Backend` traits with minimal obligations. The
//! free functions [`detect`], [`segment`] and [`extract_features`] wrap any
//! backend and enforce the output contracts (score threshold, clipping,
//! ordering, mask dimensions, non-empty masks) so those hold regardless of
//! which backend produced the raw output.

mod external;
mod stub;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{BinaryMask, BoundingBox, DatasetKind, ManifestError, SegmentationMask};

pub use external::{ExternalDetector, ExternalExtractor, ExternalSegmenter};
pub use stub::{is_marker_pixel, sidecar_path, StubDetector, StubExtractor, StubSegmenter, StubSegmenterMode};

pub const STUB_DETECTOR: &str = "stub-detector";
pub const STUB_SEGMENTER: &str = "stub-segmenter";
pub const STUB_EXTRACTOR: &str = "stub-extractor";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("backend `{id}` is not available: {hint}")]
    BackendUnavailable { id: String, hint: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("segmenter returned an empty mask")]
    EmptyMask,
    #[error(transparent)]
    Prompt(#[from] ManifestError),
    #[error("backend `{id}` failed: {message}")]
    Backend { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub label: String,
    /// Set when the box was drawn by a reviewer rather than proposed by a detector.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub manual: bool,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, label: impl Into<String>) -> Self {
        Self {
            bbox,
            score,
            label: label.into(),
            manual: false,
        }
    }

    pub fn manual(bbox: BoundingBox, label: impl Into<String>) -> Self {
        Self {
            manual: true,
            ..Self::new(bbox, 1.0, label)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub backend_id: String,
    #[serde(default)]
    pub model_variant: String,
    pub vocabulary: Vec<String>,
    pub confidence_threshold: f64,
    pub ambiguity_margin: f64,
}

impl DetectorConfig {
    pub fn stub(kind: DatasetKind) -> Self {
        Self {
            backend_id: STUB_DETECTOR.into(),
            model_variant: String::new(),
            vocabulary: kind.default_vocabulary(),
            confidence_threshold: 0.3,
            ambiguity_margin: 0.1,
        }
    }

    /// Detic with the LVIS+ImageNet-21k CLIP Swin-B checkpoint.
    pub fn reference(kind: DatasetKind) -> Self {
        Self {
            backend_id: "detic".into(),
            model_variant: "Detic_LI21k_CLIP_SwinB".into(),
            ..Self::stub(kind)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocabulary.is_empty() {
            return Err(ModelError::Config("detector vocabulary is empty".into()));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(ModelError::Config(format!(
                "confidence_threshold {} outside (0, 1)",
                self.confidence_threshold
            )));
        }
        if !(self.ambiguity_margin >= 0.0) {
            return Err(ModelError::Config("ambiguity_margin must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub backend_id: String,
    pub model_variant: String,
}

impl SegmenterConfig {
    pub fn stub(mode: StubSegmenterMode) -> Self {
        Self {
            backend_id: STUB_SEGMENTER.into(),
            model_variant: mode.as_str().into(),
        }
    }

    pub fn reference() -> Self {
        Self {
            backend_id: "sam".into(),
            model_variant: "ViT-L SAM".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorConfig {
    pub backend_id: String,
    pub embedding_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl FeatureExtractorConfig {
    pub fn stub(embedding_dim: usize) -> Self {
        Self {
            backend_id: STUB_EXTRACTOR.into(),
            embedding_dim,
            seed: 0,
        }
    }

    pub fn reference() -> Self {
        Self {
            backend_id: "dinov2".into(),
            embedding_dim: 768,
            seed: 0,
        }
    }
}

/// A source raster plus, when known, the file it was read from.
#[derive(Debug, Clone, Copy)]
pub struct InputImage<'a> {
    pub pixels: &'a RgbImage,
    pub path: Option<&'a Path>,
}

impl<'a> InputImage<'a> {
    pub fn new(pixels: &'a RgbImage) -> Self {
        Self { pixels, path: None }
    }

    pub fn with_path(pixels: &'a RgbImage, path: &'a Path) -> Self {
        Self {
            pixels,
            path: Some(path),
        }
    }
}

pub trait DetectorBackend: Send + Sync {
    fn id(&self) -> &str;
    /// Raw proposals; may be unsorted, unclipped and below threshold.
    fn propose(&self, image: InputImage<'_>, config: &DetectorConfig) -> Result<Vec<Detection>, ModelError>;
}

pub trait SegmenterBackend: Send + Sync {
    fn id(&self) -> &str;
    fn segment_box(&self, image: InputImage<'_>, prompt: &BoundingBox) -> Result<BinaryMask, ModelError>;
}

pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, image: &RgbImage) -> Result<Vec<f64>, ModelError>;
}

/// Descending score; ties broken by box `(x, y, w, h)` ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.bbox.cmp(&b.bbox))
}

pub fn detect(
    backend: &dyn DetectorBackend,
    image: InputImage<'_>,
    config: &DetectorConfig,
) -> Result<Vec<Detection>, ModelError> {
    config.validate()?;
    let (w, h) = image.pixels.dimensions();
    if w == 0 || h == 0 {
        return Err(ModelError::Config("empty image".into()));
    }
    let mut out: Vec<Detection> = backend
        .propose(image, config)?
        .into_iter()
        .filter(|d| d.score.is_finite() && d.score >= config.confidence_threshold)
        .filter_map(|d| {
            d.bbox.clip(w, h).map(|bbox| Detection {
                bbox,
                score: d.score.min(1.0),
                ..d
            })
        })
        .collect();
    out.sort_by(detection_order);
    Ok(out)
}

pub fn segment(
    backend: &dyn SegmenterBackend,
    image: InputImage<'_>,
    prompt: &BoundingBox,
) -> Result<SegmentationMask, ModelError> {
    let (w, h) = image.pixels.dimensions();
    prompt.validate_within(w, h)?;
    let mask = backend.segment_box(image, prompt)?;
    mask.ensure_dims(h, w).map_err(|e| ModelError::Backend {
        id: backend.id().into(),
        message: e.to_string(),
    })?;
    if mask.is_empty() {
        return Err(ModelError::EmptyMask);
    }
    Ok(SegmentationMask::encode(&mask))
}

pub fn extract_features(
    backend: &dyn FeatureExtractor,
    images: &[RgbImage],
    config: &FeatureExtractorConfig,
) -> Result<Array2<f64>, ModelError> {
    if images.is_empty() {
        return Err(ModelError::Config("feature extraction needs at least one image".into()));
    }
    if backend.dim() != config.embedding_dim {
        return Err(ModelError::Config(format!(
            "backend `{}` produces {} dims, config asks for {}",
            backend.id(),
            backend.dim(),
            config.embedding_dim
        )));
    }
    let mut out = Array2::zeros((images.len(), config.embedding_dim));
    for (i, img) in images.iter().enumerate() {
        let row = backend.embed(img)?;
        if row.len() != config.embedding_dim {
            return Err(ModelError::Backend {
                id: backend.id().into(),
                message: format!("embedding has {} dims", row.len()),
            });
        }
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    Ok(out)
}

/// Environment variable holding the command line for an external backend,
/// e.g. `FGDATA_GROUNDING_DINO_CMD`.
pub fn command_env_var(backend_id: &str) -> String {
    format!("FGDATA_{}_CMD", env_key(backend_id))
}

/// Environment variable holding the checkpoint location, e.g. `FGDATA_SAM_CHECKPOINT`.
pub fn checkpoint_env_var(backend_id: &str) -> String {
    format!("FGDATA_{}_CHECKPOINT", env_key(backend_id))
}

fn env_key(id: &str) -> String {
    id.to_ascii_uppercase().replace(['-', '.'], "_")
}

const EXTERNAL_DETECTORS: [&str; 2] = ["detic", "grounding-dino"];
const EXTERNAL_SEGMENTERS: [&str; 1] = ["sam"];
const EXTERNAL_EXTRACTORS: [&str; 1] = ["dinov2"];

/// Resolves backend ids to instances. Stubs are always present; the real
/// model ids resolve to external-process plug-ins when their command
/// variable is set, and explicitly registered instances take precedence.
#[derive(Default, Clone)]
pub struct BackendRegistry {
    detectors: HashMap<String, Arc<dyn DetectorBackend>>,
    segmenters: HashMap<String, Arc<dyn SegmenterBackend>>,
    extractors: HashMap<String, Arc<dyn FeatureExtractor>>,
}

impl BackendRegistry {
    pub fn register_detector(&mut self, backend: Arc<dyn DetectorBackend>) {
        self.detectors.insert(backend.id().to_string(), backend);
    }

    pub fn register_segmenter(&mut self, backend: Arc<dyn SegmenterBackend>) {
        self.segmenters.insert(backend.id().to_string(), backend);
    }

    pub fn register_extractor(&mut self, backend: Arc<dyn FeatureExtractor>) {
        self.extractors.insert(backend.id().to_string(), backend);
    }

    pub fn detector(&self, config: &DetectorConfig) -> Result<Arc<dyn DetectorBackend>, ModelError> {
        let id = config.backend_id.as_str();
        if let Some(b) = self.detectors.get(id) {
            return Ok(b.clone());
        }
        match id {
            STUB_DETECTOR => Ok(Arc::new(StubDetector)),
            _ if EXTERNAL_DETECTORS.contains(&id) => {
                Ok(Arc::new(ExternalDetector::from_env(id, &config.model_variant)?))
            }
            _ => Err(unknown(id)),
        }
    }

    pub fn segmenter(&self, config: &SegmenterConfig) -> Result<Arc<dyn SegmenterBackend>, ModelError> {
        let id = config.backend_id.as_str();
        if let Some(b) = self.segmenters.get(id) {
            return Ok(b.clone());
        }
        match id {
            STUB_SEGMENTER => Ok(Arc::new(StubSegmenter::new(config.model_variant.parse()?))),
            _ if EXTERNAL_SEGMENTERS.contains(&id) => {
                Ok(Arc::new(ExternalSegmenter::from_env(id, &config.model_variant)?))
            }
            _ => Err(unknown(id)),
        }
    }

    pub fn extractor(&self, config: &FeatureExtractorConfig) -> Result<Arc<dyn FeatureExtractor>, ModelError> {
        let id = config.backend_id.as_str();
        if let Some(b) = self.extractors.get(id) {
            return Ok(b.clone());
        }
        if config.embedding_dim == 0 {
            return Err(ModelError::Config("embedding_dim must be positive".into()));
        }
        match id {
            STUB_EXTRACTOR => Ok(Arc::new(StubExtractor::new(config.embedding_dim, config.seed))),
            _ if EXTERNAL_EXTRACTORS.contains(&id) => {
                Ok(Arc::new(ExternalExtractor::from_env(id, config.embedding_dim)?))
            }
            _ => Err(unknown(id)),
        }
    }
}

fn unknown(id: &str) -> ModelError {
    ModelError::BackendUnavailable {
        id: id.into(),
        hint: "no backend registered under this id".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    struct Fixed(Vec<Detection>);

    impl DetectorBackend for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn propose(&self, _: InputImage<'_>, _: &DetectorConfig) -> Result<Vec<Detection>, ModelError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn detect_filters_clips_and_orders() {
        let img = RgbImage::new(20, 10);
        let backend = Fixed(vec![
            Detection::new(BoundingBox::new(0, 0, 5, 5), 0.2, "bird"),
            Detection::new(BoundingBox::new(15, 5, 10, 10), 0.8, "bird"),
            Detection::new(BoundingBox::new(3, 3, 2, 2), 0.9, "bird"),
            Detection::new(BoundingBox::new(1, 3, 2, 2), 0.9, "bird"),
            Detection::new(BoundingBox::new(30, 30, 2, 2), 0.95, "bird"),
        ]);
        let out = detect(&backend, InputImage::new(&img), &DetectorConfig::stub(DatasetKind::Cub)).unwrap();
        let boxes: Vec<_> = out.iter().map(|d| d.bbox).collect();
        assert_eq!(
            boxes,
            vec![
                BoundingBox::new(1, 3, 2, 2),
                BoundingBox::new(3, 3, 2, 2),
                BoundingBox::new(15, 5, 5, 5),
            ]
        );
    }

    #[test]
    fn empty_vocabulary_is_config_error() {
        let img = RgbImage::new(4, 4);
        let mut cfg = DetectorConfig::stub(DatasetKind::Cub);
        cfg.vocabulary.clear();
        assert!(matches!(
            detect(&StubDetector, InputImage::new(&img), &cfg),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn reference_configs_name_the_published_models() {
        let d = DetectorConfig::reference(DatasetKind::Cub);
        assert_eq!(d.backend_id, "detic");
        assert_eq!(d.model_variant, "Detic_LI21k_CLIP_SwinB");
        assert_eq!(SegmenterConfig::reference().model_variant, "ViT-L SAM");
        assert_eq!(FeatureExtractorConfig::reference().backend_id, "dinov2");
    }

    #[test]
    fn real_backend_without_plugin_is_unavailable() {
        std::env::remove_var(command_env_var("detic"));
        let reg = BackendRegistry::default();
        match reg.detector(&DetectorConfig::reference(DatasetKind::Cub)) {
            Err(ModelError::BackendUnavailable { id, hint }) => {
                assert_eq!(id, "detic");
                assert!(hint.contains("FGDATA_DETIC_CMD"));
            }
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("expected unavailable"),
        }
        assert!(reg
            .detector(&DetectorConfig {
                backend_id: "nope".into(),
                ..DetectorConfig::stub(DatasetKind::Cub)
            })
            .is_err());
    }

    #[test]
    fn segment_contract() {
        let img = RgbImage::from_pixel(12, 12, Rgb([0, 0, 0]));
        let seg = StubSegmenter::new(StubSegmenterMode::Box);
        let bbox = BoundingBox::new(1, 1, 10, 10);
        let m = segment(&seg, InputImage::new(&img), &bbox).unwrap();
        assert_eq!((m.height, m.width), (12, 12));
        assert_eq!(m.area(), bbox.area());

        let shrink = StubSegmenter::new(StubSegmenterMode::Shrink);
        let m = segment(&shrink, InputImage::new(&img), &bbox).unwrap().decode().unwrap();
        assert_eq!(m, BinaryMask::from_box(12, 12, &BoundingBox::new(2, 2, 8, 8)));

        let outside = BoundingBox::new(5, 5, 10, 10);
        assert!(matches!(
            segment(&seg, InputImage::new(&img), &outside),
            Err(ModelError::Prompt(_))
        ));
        // marker mode on a blank image finds nothing under the prompt
        let marker = StubSegmenter::new(StubSegmenterMode::Marker);
        assert!(matches!(
            segment(&marker, InputImage::new(&img), &bbox),
            Err(ModelError::EmptyMask)
        ));
    }

    #[test]
    fn feature_batch_shape() {
        let imgs: Vec<RgbImage> = (0..5).map(|i| RgbImage::from_pixel(8, 6, Rgb([i * 40, 3, 9]))).collect();
        let cfg = FeatureExtractorConfig::stub(16);
        let ext = BackendRegistry::default().extractor(&cfg).unwrap();
        let f = extract_features(ext.as_ref(), &imgs, &cfg).unwrap();
        assert_eq!(f.dim(), (5, 16));
        assert!(extract_features(ext.as_ref(), &[], &cfg).is_err());
    }
}
