//! Failure flagging, the review queue, and the review service.
//!
//! The automatic checks only pre-select candidates for a human; they are
//! heuristics over the detection and mask geometry.

mod review;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expand::label_components;
use crate::manifest::BinaryMask;
use crate::models::Detection;

pub use review::{
    enqueue_flagged, replay, LogEntry, ReviewAction, ReviewContext, ReviewDecision, ReviewSession, ReviewStats,
};
pub use server::{router, serve, DecisionBody, QueueItem, QueuePage, RecordView, ServerState, StatsView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlagKind {
    NoSubject,
    WrongSubject,
    UnwantedBackground,
    IncompleteObject,
    Ambiguous,
    /// The record could not be processed at all (unreadable image, write failure).
    ProcessingError,
}

impl FlagKind {
    pub const ALL: [FlagKind; 6] = [
        FlagKind::NoSubject,
        FlagKind::WrongSubject,
        FlagKind::UnwantedBackground,
        FlagKind::IncompleteObject,
        FlagKind::Ambiguous,
        FlagKind::ProcessingError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlagKind::NoSubject => "NO_SUBJECT",
            FlagKind::WrongSubject => "WRONG_SUBJECT",
            FlagKind::UnwantedBackground => "UNWANTED_BACKGROUND",
            FlagKind::IncompleteObject => "INCOMPLETE_OBJECT",
            FlagKind::Ambiguous => "AMBIGUOUS",
            FlagKind::ProcessingError => "PROCESSING_ERROR",
        }
    }
}

impl std::fmt::Display for FlagKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaFlag {
    pub kind: FlagKind,
    pub detail: String,
    pub metric: Option<f64>,
}

impl QaFlag {
    pub fn new(kind: FlagKind, detail: impl Into<String>, metric: Option<f64>) -> Self {
        Self {
            kind,
            detail: detail.into(),
            metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaThresholds {
    pub max_mask_to_box_ratio: f64,
    pub min_mask_to_box_ratio: f64,
    pub max_border_contact_fraction: f64,
    pub max_components: usize,
}

impl Default for QaThresholds {
    fn default() -> Self {
        Self {
            max_mask_to_box_ratio: 1.5,
            min_mask_to_box_ratio: 0.25,
            max_border_contact_fraction: 0.4,
            max_components: 3,
        }
    }
}

impl QaThresholds {
    pub fn validate(&self) -> Result<(), QaError> {
        if !(0.0 < self.min_mask_to_box_ratio && self.min_mask_to_box_ratio < self.max_mask_to_box_ratio) {
            return Err(QaError::Invalid(format!(
                "need 0 < min_mask_to_box_ratio ({}) < max_mask_to_box_ratio ({})",
                self.min_mask_to_box_ratio, self.max_mask_to_box_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("record `{record_id}` is already {state}")]
    Conflict { record_id: String, state: String },
    #[error("invalid decision: {0}")]
    Invalid(String),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("decision log: {0}")]
    Log(String),
}

impl From<crate::manifest::MaskError> for QaError {
    fn from(e: crate::manifest::MaskError) -> Self {
        QaError::Pipeline(e.into())
    }
}

/// Everything the checks look at for one record.
#[derive(Debug, Clone, Copy)]
pub struct FlagInput<'a> {
    pub detection: Option<&'a Detection>,
    /// `None` with a detection present means segmentation produced nothing.
    pub mask: Option<&'a BinaryMask>,
    pub ambiguous: bool,
    pub vocabulary: &'a [String],
}

/// Fraction of the image's outer frame covered by the mask.
pub fn border_contact_fraction(mask: &BinaryMask) -> f64 {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    if h == 0 || w == 0 {
        return 0.0;
    }
    let mut frame = 0usize;
    let mut hit = 0usize;
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                frame += 1;
                hit += mask.get(r, c) as usize;
            }
        }
    }
    hit as f64 / frame as f64
}

pub fn auto_flag(input: &FlagInput<'_>, thresholds: &QaThresholds) -> Vec<QaFlag> {
    let Some(det) = input.detection else {
        return vec![QaFlag::new(FlagKind::NoSubject, "detector returned no subject", None)];
    };
    let mut flags = Vec::new();

    if !det.manual && !input.vocabulary.iter().any(|v| v == &det.label) {
        flags.push(QaFlag::new(
            FlagKind::WrongSubject,
            format!("label `{}` not in vocabulary {:?}", det.label, input.vocabulary),
            Some(det.score),
        ));
    }

    match input.mask {
        None => flags.push(QaFlag::new(
            FlagKind::IncompleteObject,
            "segmenter returned an empty mask",
            Some(0.0),
        )),
        Some(mask) => {
            let ratio = mask.area() as f64 / det.bbox.area() as f64;
            let border = border_contact_fraction(mask);
            let too_big = ratio > thresholds.max_mask_to_box_ratio;
            let touches = border > thresholds.max_border_contact_fraction;
            if too_big || touches {
                let detail = match (too_big, touches) {
                    (true, true) => format!("mask/box ratio {ratio:.3} and border contact {border:.3}"),
                    (true, false) => format!("mask/box ratio {ratio:.3}"),
                    _ => format!("border contact {border:.3}"),
                };
                flags.push(QaFlag::new(
                    FlagKind::UnwantedBackground,
                    detail,
                    Some(if too_big { ratio } else { border }),
                ));
            }
            let (_, components) = label_components(mask);
            let too_small = ratio < thresholds.min_mask_to_box_ratio;
            let fragmented = components > thresholds.max_components;
            if too_small || fragmented {
                let detail = match (too_small, fragmented) {
                    (true, true) => format!("mask/box ratio {ratio:.3} and {components} components"),
                    (true, false) => format!("mask/box ratio {ratio:.3}"),
                    _ => format!("{components} components"),
                };
                flags.push(QaFlag::new(
                    FlagKind::IncompleteObject,
                    detail,
                    Some(if too_small { ratio } else { components as f64 }),
                ));
            }
        }
    }

    if input.ambiguous {
        flags.push(QaFlag::new(
            FlagKind::Ambiguous,
            "a second detection scored within the ambiguity margin",
            None,
        ));
    }
    flags.sort_by_key(|f| f.kind);
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::BoundingBox;

    fn vocab() -> Vec<String> {
        vec!["bird".into()]
    }

    fn kinds(flags: &[QaFlag]) -> Vec<FlagKind> {
        flags.iter().map(|f| f.kind).collect()
    }

    #[test]
    fn absent_detection_is_no_subject() {
        let v = vocab();
        let f = auto_flag(
            &FlagInput {
                detection: None,
                mask: None,
                ambiguous: false,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert_eq!(kinds(&f), vec![FlagKind::NoSubject]);
    }

    #[test]
    fn whole_image_mask_against_thirty_percent_box() {
        // 10x10 image, 6x5 box = 30% of the image, ratio 100/30
        let v = vocab();
        let det = Detection::new(BoundingBox::new(2, 2, 6, 5), 0.9, "bird");
        let mask = BinaryMask::full(10, 10);
        let f = auto_flag(
            &FlagInput {
                detection: Some(&det),
                mask: Some(&mask),
                ambiguous: false,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert_eq!(kinds(&f), vec![FlagKind::UnwantedBackground]);
        assert!((f[0].metric.unwrap() - 100.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn scattered_blobs_are_incomplete() {
        let v = vocab();
        let det = Detection::new(BoundingBox::new(0, 0, 20, 4), 0.9, "bird");
        // five 3x3 blobs along a row inside the box: area 45 of 80
        let mask = BinaryMask::from_fn(12, 24, |r, c| (1..4).contains(&r) && c < 19 && c % 4 < 3);
        let (_, n) = label_components(&mask);
        assert_eq!(n, 5);
        let f = auto_flag(
            &FlagInput {
                detection: Some(&det),
                mask: Some(&mask),
                ambiguous: false,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert_eq!(kinds(&f), vec![FlagKind::IncompleteObject]);
    }

    #[test]
    fn clean_record_has_no_flags() {
        let v = vocab();
        let bbox = BoundingBox::new(3, 3, 5, 5);
        let det = Detection::new(bbox, 0.9, "bird");
        let mask = BinaryMask::from_box(12, 12, &bbox);
        let input = FlagInput {
            detection: Some(&det),
            mask: Some(&mask),
            ambiguous: false,
            vocabulary: &v,
        };
        assert!(auto_flag(&input, &QaThresholds::default()).is_empty());
        // deterministic
        assert_eq!(
            auto_flag(&input, &QaThresholds::default()),
            auto_flag(&input, &QaThresholds::default())
        );
    }

    #[test]
    fn wrong_label_and_ambiguity() {
        let v = vocab();
        let bbox = BoundingBox::new(3, 3, 5, 5);
        let det = Detection::new(bbox, 0.9, "cat");
        let mask = BinaryMask::from_box(12, 12, &bbox);
        let f = auto_flag(
            &FlagInput {
                detection: Some(&det),
                mask: Some(&mask),
                ambiguous: true,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert_eq!(kinds(&f), vec![FlagKind::WrongSubject, FlagKind::Ambiguous]);
        // reviewer-drawn boxes are never a wrong subject
        let manual = Detection::manual(bbox, "cat");
        let f = auto_flag(
            &FlagInput {
                detection: Some(&manual),
                mask: Some(&mask),
                ambiguous: false,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert!(f.is_empty());
    }

    #[test]
    fn missing_mask_with_detection_is_incomplete() {
        let v = vocab();
        let det = Detection::new(BoundingBox::new(0, 0, 2, 2), 0.9, "bird");
        let f = auto_flag(
            &FlagInput {
                detection: Some(&det),
                mask: None,
                ambiguous: false,
                vocabulary: &v,
            },
            &QaThresholds::default(),
        );
        assert_eq!(kinds(&f), vec![FlagKind::IncompleteObject]);
    }

    #[test]
    fn border_fraction_values() {
        assert_eq!(border_contact_fraction(&BinaryMask::full(5, 5)), 1.0);
        assert_eq!(border_contact_fraction(&BinaryMask::empty(5, 5)), 0.0);
        // top row of a 5x5: 5 of 16 frame pixels
        let m = BinaryMask::from_fn(5, 5, |r, _| r == 0);
        assert!((border_contact_fraction(&m) - 5.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_validation() {
        assert!(QaThresholds::default().validate().is_ok());
        let bad = QaThresholds {
            min_mask_to_box_ratio: 2.0,
            ..QaThresholds::default()
        };
        assert!(bad.validate().is_err());
    }
}
