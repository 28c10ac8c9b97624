//! Dataset manifests: the record model shared by every stage, plus JSONL
//! persistence and ingestion of the published dataset layouts.

mod ingest;
mod io;
mod mask;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Detection;
use crate::qa::{FlagKind, QaFlag};

pub use ingest::{load_source_dataset, IngestIssue, IngestOptions, IngestReport};
pub use io::{load_manifest, manifest_from_jsonl, manifest_to_jsonl, save_manifest};
pub use mask::{rle_decode, rle_encode, BinaryMask, MaskError, SegmentationMask};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("missing annotation file {0}")]
    MissingFile(String),
    #[error("no images found under {0}")]
    Empty(String),
    #[error("{file}:{line}: {message}")]
    Annotation {
        file: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record_id {0}")]
    DuplicateRecord(String),
    #[error("record {record_id}: class_id {class_id} out of range for {classes} classes")]
    ClassOutOfRange {
        record_id: String,
        class_id: u32,
        classes: usize,
    },
    #[error("box ({x},{y},{w},{h}) invalid for {width}x{height} image")]
    InvalidBox {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ManifestError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn validate_within(&self, width: u32, height: u32) -> Result<(), ManifestError> {
        let ok = self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64;
        if ok {
            Ok(())
        } else {
            Err(ManifestError::InvalidBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            })
        }
    }

    /// Intersection with the image frame; `None` when nothing is left.
    pub fn clip(&self, width: u32, height: u32) -> Option<Self> {
        let x0 = self.x.min(width);
        let y0 = self.y.min(height);
        let x1 = self.x.saturating_add(self.w).min(width);
        let y1 = self.y.saturating_add(self.h).min(height);
        (x1 > x0 && y1 > y0).then(|| Self::new(x0, y0, x1 - x0, y1 - y0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    #[default]
    Pending,
    Accepted,
    Rejected,
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cub,
    Cars,
    Aircraft,
    Generic,
}

impl DatasetKind {
    /// `(classes, images)` of a pristine copy of the published dataset.
    pub fn published_counts(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::Cub => Some((200, 11788)),
            DatasetKind::Cars => Some((196, 16185)),
            DatasetKind::Aircraft => Some((100, 10000)),
            DatasetKind::Generic => None,
        }
    }

    /// Detector queries used when a run does not override them.
    pub fn default_vocabulary(self) -> Vec<String> {
        let words: &[&str] = match self {
            DatasetKind::Cub => &["bird"],
            DatasetKind::Cars => &["car"],
            DatasetKind::Aircraft => &["airplane", "aircraft"],
            DatasetKind::Generic => &["object"],
        };
        words.iter().map(|s| s.to_string()).collect()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Cub => "CUB",
            DatasetKind::Cars => "Cars",
            DatasetKind::Aircraft => "Aircraft",
            DatasetKind::Generic => "Generic",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cub" => Ok(Self::Cub),
            "cars" => Ok(Self::Cars),
            "aircraft" => Ok(Self::Aircraft),
            "generic" => Ok(Self::Generic),
            other => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

/// One dataset sample. Field names are part of the manifest file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub class_id: u32,
    pub class_name: String,
    pub split: Split,
    pub source_path: String,
    pub fg_path: Option<String>,
    pub detection: Option<Detection>,
    pub mask: Option<SegmentationMask>,
    pub flags: Vec<QaFlag>,
    pub review: ReviewState,
}

impl ImageRecord {
    pub fn new(source_path: impl Into<String>, class_id: u32, class_name: impl Into<String>, split: Split) -> Self {
        let source_path = source_path.into();
        Self {
            record_id: source_path.clone(),
            class_id,
            class_name: class_name.into(),
            split,
            source_path,
            fg_path: None,
            detection: None,
            mask: None,
            flags: Vec::new(),
            review: ReviewState::Pending,
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn has_flag(&self, kind: FlagKind) -> bool {
        self.flags.iter().any(|f| f.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Name of the manifest this one was derived from, or `"original"`.
    pub source: String,
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_policy: Option<String>,
}

impl Provenance {
    pub fn original() -> Self {
        Self {
            source: "original".into(),
            config_digest: None,
            split_policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: DatasetKind,
    pub classes: Vec<String>,
    pub records: Vec<ImageRecord>,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(ManifestError::DuplicateRecord(r.record_id.clone()));
            }
            if r.class_id as usize >= self.classes.len() {
                return Err(ManifestError::ClassOutOfRange {
                    record_id: r.record_id.clone(),
                    class_id: r.class_id,
                    classes: self.classes.len(),
                });
            }
        }
        Ok(())
    }

    pub fn record(&self, record_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    /// True when class and image counts equal the published figures for the
    /// dataset kind. Always false for generic datasets.
    pub fn matches_published_counts(&self) -> bool {
        self.kind.published_counts() == Some((self.classes.len(), self.records.len()))
    }
}
