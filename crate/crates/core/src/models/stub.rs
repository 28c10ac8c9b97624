//! Deterministic stand-ins for the foundation models.
//!
//! Fixture images paint their subject with "marker" pixels (red channel at
//! least 200, green below 100). The stub detector reports the bounding box of
//! all marker pixels, unless a `<image>.det.json` sidecar next to the source
//! file lists the detections explicitly.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Detection, DetectorBackend, DetectorConfig, FeatureExtractor, InputImage, ModelError,
    SegmenterBackend, STUB_DETECTOR, STUB_EXTRACTOR, STUB_SEGMENTER,
};
use crate::manifest::{BinaryMask, BoundingBox};

pub fn is_marker_pixel(p: &Rgb<u8>) -> bool {
    p[0] >= 200 && p[1] < 100
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut name = image_path.as_os_str().to_owned();
    name.push(".det.json");
    PathBuf::from(name)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StubDetector;

impl DetectorBackend for StubDetector {
    fn id(&self) -> &str {
        STUB_DETECTOR
    }

    fn propose(&self, image: InputImage<'_>, config: &DetectorConfig) -> Result<Vec<Detection>, ModelError> {
        if let Some(sidecar) = image.path.map(sidecar_path).filter(|p| p.is_file()) {
            let text = fs::read_to_string(&sidecar).map_err(|e| backend_err(format!("{}: {e}", sidecar.display())))?;
            return serde_json::from_str(&text).map_err(|e| backend_err(format!("{}: {e}", sidecar.display())));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in image.pixels.enumerate_pixels() {
            if is_marker_pixel(p) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 == u32::MAX {
            return Ok(Vec::new());
        }
        Ok(vec![Detection::new(
            BoundingBox::new(x0, y0, x1 - x0, y1 - y0),
            1.0,
            config.vocabulary[0].clone(),
        )])
    }
}

fn backend_err(message: String) -> ModelError {
    ModelError::Backend {
        id: STUB_DETECTOR.into(),
        message,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StubSegmenterMode {
    /// Mask is the box interior.
    #[default]
    Box,
    /// Box interior inset by one pixel on every side.
    Shrink,
    /// Every 4-connected marker region touching the box, anywhere in the image.
    Marker,
}

impl StubSegmenterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Box => "box",
            Self::Shrink => "shrink",
            Self::Marker => "marker",
        }
    }
}

impl FromStr for StubSegmenterMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" | "box" => Ok(Self::Box),
            "shrink" => Ok(Self::Shrink),
            "marker" => Ok(Self::Marker),
            other => Err(ModelError::Config(format!(
                "unknown stub segmenter variant `{other}` (box, shrink, marker)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubSegmenter {
    mode: StubSegmenterMode,
}

impl StubSegmenter {
    pub fn new(mode: StubSegmenterMode) -> Self {
        Self { mode }
    }
}

impl SegmenterBackend for StubSegmenter {
    fn id(&self) -> &str {
        STUB_SEGMENTER
    }

    fn segment_box(&self, image: InputImage<'_>, prompt: &BoundingBox) -> Result<BinaryMask, ModelError> {
        let (w, h) = image.pixels.dimensions();
        Ok(match self.mode {
            StubSegmenterMode::Box => BinaryMask::from_box(h, w, prompt),
            StubSegmenterMode::Shrink => {
                if prompt.w <= 2 || prompt.h <= 2 {
                    BinaryMask::empty(h, w)
                } else {
                    let inner = BoundingBox::new(prompt.x + 1, prompt.y + 1, prompt.w - 2, prompt.h - 2);
                    BinaryMask::from_box(h, w, &inner)
                }
            }
            StubSegmenterMode::Marker => marker_regions(image.pixels, prompt),
        })
    }
}

fn marker_regions(img: &RgbImage, prompt: &BoundingBox) -> BinaryMask {
    let (w, h) = img.dimensions();
    let mut mask = BinaryMask::empty(h, w);
    let mut stack = Vec::new();
    for y in prompt.y..prompt.y + prompt.h {
        for x in prompt.x..prompt.x + prompt.w {
            if is_marker_pixel(img.get_pixel(x, y)) && !mask.get(y as usize, x as usize) {
                mask.set(y as usize, x as usize, true);
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx < w && ny < h && !mask.get(ny as usize, nx as usize) && is_marker_pixel(img.get_pixel(nx, ny)) {
                mask.set(ny as usize, nx as usize, true);
                stack.push((nx, ny));
            }
        }
    }
    mask
}

const GRID: usize = 16;

/// Seeded random projection of a 16x16 area-averaged thumbnail.
///
/// Cell means are kept in floating point, so changing any single pixel moves
/// the thumbnail and (almost surely) every output coordinate.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    dim: usize,
    weights: Vec<f64>,
}

impl StubExtractor {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let weights = (0..dim * GRID * GRID * 3)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self { dim, weights }
    }

    fn thumbnail(image: &RgbImage) -> Vec<f64> {
        let (w, h) = image.dimensions();
        let mut sums = vec![0.0f64; GRID * GRID * 3];
        let mut counts = vec![0u32; GRID * GRID];
        for (x, y, p) in image.enumerate_pixels() {
            let cx = x as usize * GRID / w as usize;
            let cy = y as usize * GRID / h as usize;
            let cell = cy * GRID + cx;
            counts[cell] += 1;
            for ch in 0..3 {
                sums[cell * 3 + ch] += p[ch] as f64 / 255.0;
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            if n > 0 {
                for ch in 0..3 {
                    sums[cell * 3 + ch] /= n as f64;
                }
            }
        }
        sums
    }
}

impl FeatureExtractor for StubExtractor {
    fn id(&self) -> &str {
        STUB_EXTRACTOR
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &RgbImage) -> Result<Vec<f64>, ModelError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(ModelError::Config("empty image".into()));
        }
        let thumb = Self::thumbnail(image);
        Ok(self
            .weights
            .chunks_exact(thumb.len())
            .map(|row| row.iter().zip(&thumb).map(|(w, t)| w * t).sum())
            .collect())
    }
}
