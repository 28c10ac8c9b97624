//! Review state machine and its append-only decision log.
//!
//! The manifest state during review is a fold of the log over the processed
//! manifest: [`replay`] recomputes it from scratch, [`ReviewSession`] keeps it
//! incrementally. Both go through the same transition function.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{auto_flag, FlagInput, FlagKind, QaError, QaThresholds};
use crate::manifest::{BoundingBox, DatasetManifest, ImageRecord, ReviewState};
use crate::models::{segment, Detection, InputImage, ModelError, SegmenterBackend};
use crate::pipeline::{foreground_path, load_rgb, write_foreground, CompositeConfig, DatasetRoots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewAction {
    Accept,
    Reject,
    Reprompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub record_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_box: Option<BoundingBox>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    Decision(ReviewDecision),
    /// Administrative re-open of a decided record.
    Reset {
        record_id: String,
        reviewer: String,
        timestamp: DateTime<Utc>,
    },
}

impl LogEntry {
    pub fn record_id(&self) -> &str {
        match self {
            LogEntry::Decision(d) => &d.record_id,
            LogEntry::Reset { record_id, .. } => record_id,
        }
    }
}

/// What decisions need besides the manifest: the segmenter used for
/// re-prompts and the settings the pipeline ran with.
#[derive(Clone)]
pub struct ReviewContext {
    pub segmenter: Arc<dyn SegmenterBackend>,
    pub vocabulary: Vec<String>,
    pub composite: CompositeConfig,
    pub thresholds: QaThresholds,
    pub roots: DatasetRoots,
}

/// Record ids with flags that still await a decision, in manifest order.
pub fn enqueue_flagged(manifest: &DatasetManifest) -> Vec<String> {
    manifest
        .records
        .iter()
        .filter(|r| r.is_flagged() && r.review == ReviewState::Pending)
        .map(|r| r.record_id.clone())
        .collect()
}

fn state_name(s: ReviewState) -> &'static str {
    match s {
        ReviewState::Pending => "pending",
        ReviewState::Accepted => "accepted",
        ReviewState::Rejected => "rejected",
        ReviewState::Corrected => "corrected",
    }
}

fn transition(
    record: &ImageRecord,
    entry: &LogEntry,
    ctx: &ReviewContext,
    write_images: bool,
) -> Result<ImageRecord, QaError> {
    let mut next = record.clone();
    let decision = match entry {
        LogEntry::Reset { .. } => {
            next.review = ReviewState::Pending;
            next.fg_path = match (&next.mask, next.flags.is_empty()) {
                (Some(_), true) => Some(foreground_path(&next.source_path, ctx.composite.output_format)),
                _ => None,
            };
            return Ok(next);
        }
        LogEntry::Decision(d) => d,
    };
    if record.review != ReviewState::Pending {
        return Err(QaError::Conflict {
            record_id: record.record_id.clone(),
            state: state_name(record.review).into(),
        });
    }
    match decision.action {
        ReviewAction::Reject => {
            next.review = ReviewState::Rejected;
            next.fg_path = None;
        }
        ReviewAction::Accept => {
            let mask = record
                .mask
                .as_ref()
                .ok_or_else(|| QaError::Invalid("record has no mask to accept; reprompt or reject".into()))?;
            if write_images {
                let image = load_rgb(&ctx.roots.source_root.join(&record.source_path))?;
                write_foreground(&image, &mask.decode()?, &record.source_path, &ctx.roots.out_root, &ctx.composite)?;
            }
            next.review = ReviewState::Accepted;
            next.fg_path = Some(foreground_path(&record.source_path, ctx.composite.output_format));
        }
        ReviewAction::Reprompt => {
            let bbox = decision
                .manual_box
                .ok_or_else(|| QaError::Invalid("reprompt needs manual_box".into()))?;
            let image = load_rgb(&ctx.roots.source_root.join(&record.source_path))?;
            let input = InputImage::new(&image);
            let (w, h) = image.dimensions();
            bbox.validate_within(w, h)?;
            let mask = match segment(ctx.segmenter.as_ref(), input, &bbox) {
                Ok(m) => Some(m),
                Err(ModelError::EmptyMask) => None,
                Err(e) => return Err(QaError::Pipeline(e.into())),
            };
            let decoded = mask.as_ref().map(|m| m.decode()).transpose()?;
            let label = record
                .detection
                .as_ref()
                .map(|d| d.label.clone())
                .filter(|l| ctx.vocabulary.contains(l))
                .or_else(|| ctx.vocabulary.first().cloned())
                .unwrap_or_default();
            let detection = Detection::manual(bbox, label);
            next.flags = auto_flag(
                &FlagInput {
                    detection: Some(&detection),
                    mask: decoded.as_ref(),
                    ambiguous: false,
                    vocabulary: &ctx.vocabulary,
                },
                &ctx.thresholds,
            );
            next.detection = Some(detection);
            next.mask = mask;
            next.fg_path = None;
            // still flagged: stays pending for another attempt or a reject
            if let (true, Some(m)) = (next.flags.is_empty(), decoded.as_ref()) {
                if write_images {
                    write_foreground(&image, m, &record.source_path, &ctx.roots.out_root, &ctx.composite)?;
                }
                next.fg_path = Some(foreground_path(&record.source_path, ctx.composite.output_format));
                next.review = ReviewState::Corrected;
            }
        }
    }
    Ok(next)
}

/// Recomputes review state by folding `entries` over `base`. No files are written.
pub fn replay(base: &DatasetManifest, entries: &[LogEntry], ctx: &ReviewContext) -> Result<DatasetManifest, QaError> {
    let mut manifest = base.clone();
    let index = index_of(&manifest);
    for entry in entries {
        let i = *index
            .get(entry.record_id())
            .ok_or_else(|| QaError::NotFound(entry.record_id().into()))?;
        manifest.records[i] = transition(&manifest.records[i], entry, ctx, false)?;
    }
    Ok(manifest)
}

fn index_of(m: &DatasetManifest) -> HashMap<String, usize> {
    m.records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.clone(), i))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub processed: usize,
    pub flagged: usize,
    pub flag_rate: f64,
    pub per_flag: BTreeMap<FlagKind, usize>,
    pub queue_depth: usize,
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub corrected: usize,
}

impl ReviewStats {
    pub fn of(manifest: &DatasetManifest) -> Self {
        let mut s = ReviewStats {
            processed: manifest.records.len(),
            ..Default::default()
        };
        for r in &manifest.records {
            if r.is_flagged() {
                s.flagged += 1;
                if r.review == ReviewState::Pending {
                    s.queue_depth += 1;
                }
            }
            for f in &r.flags {
                *s.per_flag.entry(f.kind).or_insert(0) += 1;
            }
            match r.review {
                ReviewState::Pending => s.pending += 1,
                ReviewState::Accepted => s.accepted += 1,
                ReviewState::Rejected => s.rejected += 1,
                ReviewState::Corrected => s.corrected += 1,
            }
        }
        if s.processed > 0 {
            s.flag_rate = s.flagged as f64 / s.processed as f64;
        }
        s
    }
}

/// Live review state for one manifest.
pub struct ReviewSession {
    base: DatasetManifest,
    manifest: DatasetManifest,
    index: HashMap<String, usize>,
    ctx: ReviewContext,
    log: Vec<LogEntry>,
    log_path: Option<PathBuf>,
}

impl ReviewSession {
    /// Opens a session over a processed manifest. An existing log at
    /// `log_path` is replayed so the session resumes where it left off.
    pub fn open(base: DatasetManifest, ctx: ReviewContext, log_path: Option<PathBuf>) -> Result<Self, QaError> {
        let log = match &log_path {
            Some(p) if p.exists() => read_log(p)?,
            _ => Vec::new(),
        };
        let manifest = replay(&base, &log, &ctx)?;
        let index = index_of(&manifest);
        Ok(Self {
            base,
            manifest,
            index,
            ctx,
            log,
            log_path,
        })
    }

    pub fn base(&self) -> &DatasetManifest {
        &self.base
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn context(&self) -> &ReviewContext {
        &self.ctx
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn queue(&self) -> Vec<String> {
        enqueue_flagged(&self.manifest)
    }

    pub fn record(&self, record_id: &str) -> Option<&ImageRecord> {
        self.index.get(record_id).map(|&i| &self.manifest.records[i])
    }

    pub fn stats(&self) -> ReviewStats {
        ReviewStats::of(&self.manifest)
    }

    pub fn decide(&mut self, decision: ReviewDecision) -> Result<&ImageRecord, QaError> {
        self.apply(LogEntry::Decision(decision))
    }

    pub fn reset(&mut self, record_id: &str, reviewer: &str) -> Result<&ImageRecord, QaError> {
        self.apply(LogEntry::Reset {
            record_id: record_id.into(),
            reviewer: reviewer.into(),
            timestamp: Utc::now(),
        })
    }

    fn apply(&mut self, entry: LogEntry) -> Result<&ImageRecord, QaError> {
        let i = *self
            .index
            .get(entry.record_id())
            .ok_or_else(|| QaError::NotFound(entry.record_id().into()))?;
        let next = transition(&self.manifest.records[i], &entry, &self.ctx, true)?;
        if let Some(path) = &self.log_path {
            append_log(path, &entry)?;
        }
        self.log.push(entry);
        self.manifest.records[i] = next;
        Ok(&self.manifest.records[i])
    }
}

pub(crate) fn read_log(path: &std::path::Path) -> Result<Vec<LogEntry>, QaError> {
    let text = fs::read_to_string(path).map_err(|e| QaError::Log(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| QaError::Log(format!("line {}: {e}", i + 1))))
        .collect()
}

fn append_log(path: &std::path::Path, entry: &LogEntry) -> Result<(), QaError> {
    let err = |e: std::io::Error| QaError::Log(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    let mut line = serde_json::to_string(entry).expect("log entry serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(err)
}
