//! Release layout: `<out>/images/<relative path>` plus `<out>/manifest.jsonl`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RejectedPolicy;
use crate::manifest::{save_manifest, DatasetManifest, ManifestError, ReviewState};
use crate::pipeline::DatasetRoots;

pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub exported: usize,
    pub dropped_rejected: usize,
    pub kept_source: usize,
    /// Flagged records nobody has decided yet; never released.
    pub skipped_pending: usize,
}

/// Copies released images and writes the release manifest. Rejected records
/// are dropped or, with [`RejectedPolicy::KeepSource`], released with their
/// original pixels.
pub fn export_release(
    manifest: &DatasetManifest,
    roots: &DatasetRoots,
    out: &Path,
    policy: RejectedPolicy,
) -> Result<(DatasetManifest, ExportReport), ManifestError> {
    let mut report = ExportReport::default();
    let mut records = Vec::new();
    for record in &manifest.records {
        let from = match (&record.fg_path, record.review) {
            (Some(fg), _) => roots.out_root.join(fg),
            (None, ReviewState::Rejected) => match policy {
                RejectedPolicy::Drop => {
                    report.dropped_rejected += 1;
                    continue;
                }
                RejectedPolicy::KeepSource => {
                    report.kept_source += 1;
                    roots.source_root.join(&record.source_path)
                }
            },
            (None, _) => {
                report.skipped_pending += 1;
                continue;
            }
        };
        let rel = record.fg_path.clone().unwrap_or_else(|| record.source_path.clone());
        let to = out.join(IMAGES_DIR).join(&rel);
        if let Some(dir) = to.parent() {
            fs::create_dir_all(dir).map_err(|e| ManifestError::io(dir, e))?;
        }
        fs::copy(&from, &to).map_err(|e| ManifestError::io(&from, e))?;
        let mut r = record.clone();
        r.fg_path = Some(rel);
        records.push(r);
        report.exported += 1;
    }
    let release = DatasetManifest {
        records,
        ..manifest.clone()
    };
    save_manifest(&release, &out.join(MANIFEST_FILE))?;
    Ok((release, report))
}
