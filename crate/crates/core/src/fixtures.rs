//! Synthetic source corpus for tests, demos and benchmarks.
//!
//! Images are written in the generic `<split>/<class>/<file>.png` layout over
//! a noise background whose red channel stays below 180, so only painted
//! subjects count as marker pixels for the stub detector. A handful of images
//! are built to trip exactly one QA flag each when processed with
//! [`FixtureCorpus::pipeline_config`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{load_source_dataset, BoundingBox, DatasetKind, DatasetManifest, IngestOptions};
use crate::models::{sidecar_path, Detection, DetectorConfig, SegmenterConfig, StubSegmenterMode};
use crate::pipeline::{CompositeConfig, PipelineConfig, PipelineError};
use crate::qa::{FlagKind, QaThresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub clean: usize,
    /// Images per injected failure kind.
    pub failures_per_kind: usize,
    pub classes: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            clean: 60,
            failures_per_kind: 1,
            classes: 3,
            width: 64,
            height: 48,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    /// Record id to the single flag each injected failure must raise.
    pub expected: BTreeMap<String, FlagKind>,
}

impl FixtureCorpus {
    /// Stub detector with the generic vocabulary, marker-following segmenter.
    pub fn pipeline_config() -> PipelineConfig {
        PipelineConfig {
            detector: DetectorConfig::stub(DatasetKind::Generic),
            segmenter: SegmenterConfig::stub(StubSegmenterMode::Marker),
            composite: CompositeConfig::default(),
            thresholds: QaThresholds::default(),
        }
    }

    pub fn clean_ids(&self) -> Vec<&str> {
        self.manifest
            .records
            .iter()
            .map(|r| r.record_id.as_str())
            .filter(|id| !self.expected.contains_key(*id))
            .collect()
    }
}

const FAILURES: [(FlagKind, &str); 5] = [
    (FlagKind::NoSubject, "blank"),
    (FlagKind::UnwantedBackground, "spill"),
    (FlagKind::IncompleteObject, "fragments"),
    (FlagKind::WrongSubject, "mislabeled"),
    (FlagKind::Ambiguous, "ambiguous"),
];

fn noise(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random_range(0..180), rng.random(), rng.random()]))
}

fn marker(rng: &mut ChaCha8Rng) -> Rgb<u8> {
    Rgb([rng.random_range(200..=255), rng.random_range(0..100), rng.random()])
}

/// Paints a filled ellipse of marker pixels and returns its bounding box.
fn paint_ellipse(img: &mut RgbImage, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (w, h) = img.dimensions();
    let rx = rng.random_range(w as f64 * 0.12..w as f64 * 0.25);
    let ry = rng.random_range(h as f64 * 0.12..h as f64 * 0.25);
    let cx = rng.random_range(rx + 2.0..w as f64 - rx - 2.0);
    let cy = rng.random_range(ry + 2.0..h as f64 - ry - 2.0);
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                let p = marker(rng);
                img.put_pixel(x, y, p);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

fn paint_rect(img: &mut RgbImage, rng: &mut ChaCha8Rng, b: &BoundingBox) {
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let p = marker(rng);
            img.put_pixel(x, y, p);
        }
    }
}

fn write_sidecar(image_path: &Path, dets: &[Detection]) -> Result<(), PipelineError> {
    let path = sidecar_path(image_path);
    fs::write(&path, serde_json::to_string_pretty(dets).expect("detections serialize"))
        .map_err(|e| PipelineError::io(&path, e))
}

/// Renders one failure image (and its sidecar, if any).
fn render_failure(kind: FlagKind, path: &Path, rng: &mut ChaCha8Rng, w: u32, h: u32) -> Result<RgbImage, PipelineError> {
    let mut img = noise(rng, w, h);
    match kind {
        FlagKind::NoSubject => {}
        FlagKind::UnwantedBackground => {
            // the prompt box covers a small part of a large marker region
            let region = BoundingBox::new(4, 4, w - 8, h - 8);
            paint_rect(&mut img, rng, &region);
            let prompt = BoundingBox::new(w / 2 - 5, h / 2 - 5, 10, 10);
            write_sidecar(path, &[Detection::new(prompt, 0.95, "object")])?;
        }
        FlagKind::IncompleteObject => {
            let side = 4;
            let step = (w - 8) / 5;
            for k in 0..5 {
                paint_rect(&mut img, rng, &BoundingBox::new(4 + k * step, h / 2 - 2, side, side));
            }
        }
        FlagKind::WrongSubject => {
            let b = paint_ellipse(&mut img, rng);
            write_sidecar(path, &[Detection::new(b, 0.9, "person")])?;
        }
        FlagKind::Ambiguous => {
            let b = paint_ellipse(&mut img, rng);
            let other = BoundingBox::new(0, 0, w / 4, h / 4);
            write_sidecar(
                path,
                &[Detection::new(b, 0.9, "object"), Detection::new(other, 0.86, "object")],
            )?;
        }
        FlagKind::ProcessingError => unreachable!("not an injected failure"),
    }
    Ok(img)
}

/// Writes the corpus under `root` and ingests it as a generic dataset.
pub fn write_corpus(root: impl AsRef<Path>, spec: &FixtureSpec) -> Result<FixtureCorpus, PipelineError> {
    let root = root.as_ref();
    if spec.classes == 0 || spec.width < 32 || spec.height < 24 {
        return Err(PipelineError::Config(
            "fixture needs at least one class and a 32x24 canvas".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let mut expected = BTreeMap::new();

    let place = |split: &str, class: usize, file: String| -> Result<(PathBuf, String), PipelineError> {
        let rel = format!("{split}/class_{class:02}/{file}");
        let path = root.join(&rel);
        let dir = path.parent().expect("has parent");
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        Ok((path, rel))
    };

    for i in 0..spec.clean {
        let split = if i % 5 == 4 { "test" } else { "train" };
        let (path, _) = place(split, i % spec.classes, format!("clean_{i:04}.png"))?;
        let mut img = noise(&mut rng, w, h);
        paint_ellipse(&mut img, &mut rng);
        img.save(&path)?;
    }
    for (kind, stem) in FAILURES {
        for j in 0..spec.failures_per_kind {
            let (path, rel) = place("train", j % spec.classes, format!("{stem}_{j:03}.png"))?;
            render_failure(kind, &path, &mut rng, w, h)?.save(&path)?;
            expected.insert(rel, kind);
        }
    }
    // a test split must exist for the generic reader to pick up both splits
    if spec.clean < 5 {
        let (path, _) = place("test", 0, "clean_extra.png".into())?;
        let mut img = noise(&mut rng, w, h);
        paint_ellipse(&mut img, &mut rng);
        img.save(&path)?;
    }

    let options = IngestOptions {
        verify_images: false,
        name: Some("Fixture".into()),
    };
    let manifest = load_source_dataset(root, DatasetKind::Generic, &options)
        .map_err(|e| PipelineError::Config(e.to_string()))?
        .manifest;
    Ok(FixtureCorpus {
        root: root.to_path_buf(),
        manifest,
        expected,
    })
}
