//! Derived modalities computed from foreground masks: contours, colour
//! histograms of the subject, and background replacement.

mod contours;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{BinaryMask, MaskError};

pub use contours::{extract_contours, label_components, signed_area, ContourSet};

#[derive(Debug, Error, PartialEq)]
pub enum ExpandError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("bins_per_channel must be in 1..=256, got {0}")]
    Bins(u32),
    #[error("background is {got_w}x{got_h}, image is {want_w}x{want_h}")]
    BackgroundSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

/// Joint RGB histogram; cell `(r, g, b)` lives at `(r * bins + g) * bins + b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorHistogram {
    pub bins_per_channel: u32,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ColorHistogram {
    pub fn bin_of(&self, value: u8) -> usize {
        value as usize * self.bins_per_channel as usize / 256
    }

    pub fn count(&self, r_bin: usize, g_bin: usize, b_bin: usize) -> u64 {
        let b = self.bins_per_channel as usize;
        self.counts[(r_bin * b + g_bin) * b + b_bin]
    }

    /// Non-empty cells as `(r_bin, g_bin, b_bin, count)`.
    pub fn nonzero(&self) -> Vec<(usize, usize, usize, u64)> {
        let b = self.bins_per_channel as usize;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .map(|(i, n)| (i / (b * b), i / b % b, i % b, *n))
            .collect()
    }
}

pub fn foreground_histogram(
    image: &RgbImage,
    mask: &BinaryMask,
    bins_per_channel: u32,
) -> Result<ColorHistogram, ExpandError> {
    if !(1..=256).contains(&bins_per_channel) {
        return Err(ExpandError::Bins(bins_per_channel));
    }
    let (w, h) = image.dimensions();
    mask.ensure_dims(h, w)?;
    if mask.is_empty() {
        return Err(ExpandError::EmptyMask);
    }
    let b = bins_per_channel as usize;
    let mut hist = ColorHistogram {
        bins_per_channel,
        counts: vec![0; b * b * b],
        total: 0,
    };
    for (x, y, px) in image.enumerate_pixels() {
        if mask.get(y as usize, x as usize) {
            let [r, g, bl] = px.0;
            let i = (hist.bin_of(r) * b + hist.bin_of(g)) * b + hist.bin_of(bl);
            hist.counts[i] += 1;
            hist.total += 1;
        }
    }
    Ok(hist)
}

/// Source pixels under the mask, `background` pixels elsewhere. The caller
/// resizes the background beforehand.
pub fn replace_background(
    image: &RgbImage,
    mask: &BinaryMask,
    background: &RgbImage,
) -> Result<RgbImage, ExpandError> {
    let (w, h) = image.dimensions();
    mask.ensure_dims(h, w)?;
    if background.dimensions() != (w, h) {
        let (got_w, got_h) = background.dimensions();
        return Err(ExpandError::BackgroundSize {
            got_w,
            got_h,
            want_w: w,
            want_h: h,
        });
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        if mask.get(y as usize, x as usize) {
            *image.get_pixel(x, y)
        } else {
            *background.get_pixel(x, y)
        }
    }))
}
