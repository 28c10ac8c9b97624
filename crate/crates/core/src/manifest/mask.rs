//! Binary masks and their uncompressed run-length encoding.
//!
//! Runs are counted in column-major order (row index varies fastest) and the
//! first run always counts background pixels, so a mask that starts with
//! foreground has a leading zero. This is the uncompressed COCO convention.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BoundingBox;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("non-binary value {value} at (row {row}, col {col})")]
    NonBinary { row: usize, col: usize, value: u8 },
    #[error("run lengths sum to {sum}, expected {expected} ({height}x{width})")]
    SumMismatch {
        sum: u64,
        expected: u64,
        height: u32,
        width: u32,
    },
    #[error("zero-length run at position {0} (only a leading zero is allowed)")]
    InteriorZeroRun(usize),
    #[error("mask is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    DimensionMismatch {
        got_h: u32,
        got_w: u32,
        want_h: u32,
        want_w: u32,
    },
}

/// A decoded foreground mask indexed as `[row, col]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask(Array2<bool>);

impl BinaryMask {
    pub fn empty(height: u32, width: u32) -> Self {
        Self(Array2::from_elem((height as usize, width as usize), false))
    }

    pub fn full(height: u32, width: u32) -> Self {
        Self(Array2::from_elem((height as usize, width as usize), true))
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Array2::from_shape_fn(
            (height as usize, width as usize),
            |(r, c)| f(r, c),
        ))
    }

    /// Mask covering exactly the interior of `bbox`.
    pub fn from_box(height: u32, width: u32, bbox: &BoundingBox) -> Self {
        let (x0, y0) = (bbox.x as usize, bbox.y as usize);
        let (x1, y1) = (x0 + bbox.w as usize, y0 + bbox.h as usize);
        Self::from_fn(height, width, |r, c| r >= y0 && r < y1 && c >= x0 && c < x1)
    }

    /// Validates a `{0,1}` matrix.
    pub fn from_matrix(values: &Array2<u8>) -> Result<Self, MaskError> {
        if let Some(((row, col), &value)) = values.indexed_iter().find(|(_, v)| **v > 1) {
            return Err(MaskError::NonBinary { row, col, value });
        }
        Ok(Self(values.mapv(|v| v == 1)))
    }

    pub fn to_matrix(&self) -> Array2<u8> {
        self.0.mapv(u8::from)
    }

    pub fn height(&self) -> u32 {
        self.0.nrows() as u32
    }

    pub fn width(&self) -> u32 {
        self.0.ncols() as u32
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[[row, col]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.0[[row, col]] = value;
    }

    pub fn area(&self) -> u64 {
        self.0.iter().filter(|v| **v).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|v| *v)
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.0
    }

    pub fn ensure_dims(&self, height: u32, width: u32) -> Result<(), MaskError> {
        if self.height() != height || self.width() != width {
            return Err(MaskError::DimensionMismatch {
                got_h: self.height(),
                got_w: self.width(),
                want_h: height,
                want_w: width,
            });
        }
        Ok(())
    }
}

/// Run-length encoded mask as stored in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl SegmentationMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            counts: rle_encode(mask),
        }
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        rle_decode(&self.counts, self.height, self.width)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        validate_counts(&self.counts, self.height, self.width)
    }

    /// Foreground pixel count; odd-indexed runs are foreground.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let v = mask.get(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(counts: &[u32], height: u32, width: u32) -> Result<BinaryMask, MaskError> {
    validate_counts(counts, height, width)?;
    let h = height as usize;
    let mut mask = BinaryMask::empty(height, width);
    let mut idx = 0usize;
    let mut value = false;
    for &run in counts {
        if value {
            for i in idx..idx + run as usize {
                mask.set(i % h, i / h, true);
            }
        }
        idx += run as usize;
        value = !value;
    }
    Ok(mask)
}

fn validate_counts(counts: &[u32], height: u32, width: u32) -> Result<(), MaskError> {
    let expected = height as u64 * width as u64;
    let sum: u64 = counts.iter().map(|&c| c as u64).sum();
    if sum != expected {
        return Err(MaskError::SumMismatch {
            sum,
            expected,
            height,
            width,
        });
    }
    // a trailing zero would also be an empty run
    if let Some(pos) = counts.iter().skip(1).position(|&c| c == 0) {
        return Err(MaskError::InteriorZeroRun(pos + 1));
    }
    Ok(())
}
