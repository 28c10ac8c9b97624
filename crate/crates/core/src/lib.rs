//! Foreground-only variants of fine-grained image datasets.
//!
//! Source datasets are ingested into a [`manifest::DatasetManifest`], run
//! through a detector-prompted segmentation [`pipeline`], checked by [`qa`]
//! heuristics and a human review loop, and then used by [`bench`] and
//! [`analyze`] to compare models trained on source and foreground data.

pub mod analyze;
pub mod bench;
pub mod config;
pub mod expand;
pub mod export;
pub mod fixtures;
pub mod manifest;
pub mod models;
pub mod pipeline;
pub mod qa;

pub use manifest::{
    load_manifest, rle_decode, rle_encode, save_manifest, BinaryMask, BoundingBox, DatasetKind, DatasetManifest,
    ImageRecord, ReviewState, SegmentationMask, Split,
};
pub use models::{Detection, DetectorConfig, FeatureExtractorConfig, SegmenterConfig};
pub use pipeline::{CompositeConfig, Pipeline, PipelineConfig, PipelineStats};
pub use qa::{FlagKind, QaFlag, QaThresholds};
