//! detect → select → segment → composite, per record and over datasets.

mod composite;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{BinaryMask, DatasetManifest, ImageRecord, MaskError, Provenance, ReviewState};
use crate::models::{
    detect, segment, BackendRegistry, Detection, DetectorBackend, DetectorConfig, InputImage, ModelError,
    SegmenterBackend, SegmenterConfig,
};
use crate::qa::{auto_flag, FlagInput, FlagKind, QaFlag, QaThresholds};

pub use composite::{compose_foreground, foreground_path, Composite, CompositeConfig, Fill, OutputFormatPolicy};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub segmenter: SegmenterConfig,
    pub composite: CompositeConfig,
    pub thresholds: QaThresholds,
}

impl PipelineConfig {
    pub fn digest(&self) -> String {
        crate::config::digest_of(self)
    }
}

/// Source images are read from `source_root`, foreground images are written
/// to `out_root`, both keyed by the record's relative paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRoots {
    pub source_root: PathBuf,
    pub out_root: PathBuf,
}

impl DatasetRoots {
    pub fn new(source_root: impl Into<PathBuf>, out_root: impl Into<PathBuf>) -> Self {
        Self {
            source_root: source_root.into(),
            out_root: out_root.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub processed: usize,
    pub clean: usize,
    pub flagged: usize,
    pub per_flag: BTreeMap<FlagKind, usize>,
    pub wall_seconds: f64,
    pub images_per_second: f64,
    pub failures: Vec<RecordFailure>,
}

impl PipelineStats {
    pub fn from_records(records: &[ImageRecord], wall_seconds: f64) -> Self {
        let wall_seconds = wall_seconds.max(1e-9);
        let mut per_flag = BTreeMap::new();
        let mut failures = Vec::new();
        for r in records {
            for f in &r.flags {
                *per_flag.entry(f.kind).or_insert(0) += 1;
                if f.kind == FlagKind::ProcessingError {
                    failures.push(RecordFailure {
                        record_id: r.record_id.clone(),
                        detail: f.detail.clone(),
                    });
                }
            }
        }
        let flagged = records.iter().filter(|r| r.is_flagged()).count();
        Self {
            processed: records.len(),
            clean: records.len() - flagged,
            flagged,
            per_flag,
            wall_seconds,
            images_per_second: records.len() as f64 / wall_seconds,
            failures,
        }
    }

    pub fn flag_rate(&self) -> f64 {
        if self.processed == 0 {
            0.0
        } else {
            self.flagged as f64 / self.processed as f64
        }
    }
}

/// Highest-scoring detection, plus whether a runner-up came within the
/// ambiguity margin. Expects `detections` sorted by descending score.
pub fn select_subject<'a>(detections: &'a [Detection], config: &DetectorConfig) -> (Option<&'a Detection>, bool) {
    match detections {
        [] => (None, false),
        [only] => (Some(only), false),
        [first, second, ..] => (
            Some(first),
            second.score >= first.score - config.ambiguity_margin,
        ),
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    Ok(image::open(path)?.to_rgb8())
}

/// Composites and writes a foreground image; returns its relative path.
pub fn write_foreground(
    image: &RgbImage,
    mask: &BinaryMask,
    source_path: &str,
    out_root: &Path,
    config: &CompositeConfig,
) -> Result<String, PipelineError> {
    let rel = foreground_path(source_path, config.output_format);
    compose_foreground(image, mask, config)?.save(&out_root.join(&rel))?;
    Ok(rel)
}

pub struct Pipeline {
    detector: Arc<dyn DetectorBackend>,
    segmenter: Arc<dyn SegmenterBackend>,
    config: PipelineConfig,
    digest: String,
}

impl Pipeline {
    pub fn new(registry: &BackendRegistry, config: PipelineConfig) -> Result<Self, PipelineError> {
        let detector = registry.detector(&config.detector)?;
        let segmenter = registry.segmenter(&config.segmenter)?;
        Self::with_backends(detector, segmenter, config)
    }

    pub fn with_backends(
        detector: Arc<dyn DetectorBackend>,
        segmenter: Arc<dyn SegmenterBackend>,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.detector.validate()?;
        config.composite.validate()?;
        config
            .thresholds
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let digest = config.digest();
        Ok(Self {
            detector,
            segmenter,
            config,
            digest,
        })
    }

    /// Records this digest in output provenance instead of the pipeline
    /// config's own (used when a wider run configuration is in effect).
    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.digest = digest.into();
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn segmenter(&self) -> Arc<dyn SegmenterBackend> {
        self.segmenter.clone()
    }

    /// Runs one record from scratch. Never fails: problems become flags.
    pub fn process_record(&self, record: &ImageRecord, roots: &DatasetRoots) -> ImageRecord {
        let mut out = ImageRecord {
            fg_path: None,
            detection: None,
            mask: None,
            flags: Vec::new(),
            review: ReviewState::Pending,
            ..record.clone()
        };
        if let Err(e) = self.run_record(&mut out, roots) {
            out.fg_path = None;
            out.flags.push(QaFlag::new(FlagKind::ProcessingError, e.to_string(), None));
            out.flags.sort_by_key(|f| f.kind);
        }
        out
    }

    fn run_record(&self, record: &mut ImageRecord, roots: &DatasetRoots) -> Result<(), PipelineError> {
        let path = roots.source_root.join(&record.source_path);
        let image = load_rgb(&path)?;
        let input = InputImage::with_path(&image, &path);
        let detections = detect(self.detector.as_ref(), input, &self.config.detector)?;
        let (chosen, ambiguous) = select_subject(&detections, &self.config.detector);

        let mask = match chosen {
            Some(det) => match segment(self.segmenter.as_ref(), input, &det.bbox) {
                Ok(rle) => Some(rle),
                Err(ModelError::EmptyMask) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let decoded = mask.as_ref().map(|m| m.decode()).transpose()?;
        record.flags = auto_flag(
            &FlagInput {
                detection: chosen,
                mask: decoded.as_ref(),
                ambiguous,
                vocabulary: &self.config.detector.vocabulary,
            },
            &self.config.thresholds,
        );
        record.detection = chosen.cloned();
        record.mask = mask;

        if let (true, Some(m)) = (record.flags.is_empty(), decoded.as_ref()) {
            record.fg_path = Some(write_foreground(
                &image,
                m,
                &record.source_path,
                &roots.out_root,
                &self.config.composite,
            )?);
        }
        Ok(())
    }

    /// Processes every record on `workers` threads. Output order and content
    /// do not depend on the worker count.
    pub fn process_dataset(
        &self,
        manifest: &DatasetManifest,
        roots: &DatasetRoots,
        workers: usize,
    ) -> Result<(DatasetManifest, PipelineStats), PipelineError> {
        if workers == 0 {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let start = Instant::now();
        let records: Vec<ImageRecord> = pool.install(|| {
            manifest
                .records
                .par_iter()
                .map(|r| self.process_record(r, roots))
                .collect()
        });
        let stats = PipelineStats::from_records(&records, start.elapsed().as_secs_f64());
        let out = DatasetManifest {
            name: format!("{}_FG", manifest.name),
            kind: manifest.kind,
            classes: manifest.classes.clone(),
            records,
            provenance: Provenance {
                source: manifest.name.clone(),
                config_digest: Some(self.digest.clone()),
                split_policy: manifest.provenance.split_policy.clone(),
            },
        };
        Ok((out, stats))
    }
}
