use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetKind, DatasetManifest, ImageRecord, ManifestError, Provenance};

/// First line of a manifest file; every following line is one record.
#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    kind: DatasetKind,
    classes: Vec<String>,
    provenance: Provenance,
}

pub fn manifest_to_jsonl(manifest: &DatasetManifest) -> String {
    let header = Header {
        name: manifest.name.clone(),
        kind: manifest.kind,
        classes: manifest.classes.clone(),
        provenance: manifest.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn manifest_from_jsonl(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(ManifestError::Parse {
        line: 1,
        message: "empty manifest".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| ManifestError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(mask) = &record.mask {
            mask.validate().map_err(|e| ManifestError::Parse {
                line: i + 1,
                message: format!("mask: {e}"),
            })?;
        }
        records.push(record);
    }
    let manifest = DatasetManifest {
        name: header.name,
        kind: header.kind,
        classes: header.classes,
        records,
        provenance: header.provenance,
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ManifestError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| ManifestError::io(&tmp, e))?;
    f.write_all(manifest_to_jsonl(manifest).as_bytes())
        .and_then(|_| f.sync_all())
        .map_err(|e| ManifestError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ManifestError::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ManifestError::io(path, e))?;
    manifest_from_jsonl(&text)
}
