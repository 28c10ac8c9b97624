use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ExpandError;
use crate::manifest::BinaryMask;

/// Labels 4-connected foreground components in row-major discovery order.
/// Background is 0, components are `1..=count`.
pub fn label_components(mask: &BinaryMask) -> (Array2<u32>, usize) {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || labels[[r, c]] != 0 {
                continue;
            }
            count += 1;
            labels[[r, c]] = count;
            queue.push_back((r, c));
            while let Some((y, x)) = queue.pop_front() {
                let mut visit = |yy: usize, xx: usize| {
                    if mask.get(yy, xx) && labels[[yy, xx]] == 0 {
                        labels[[yy, xx]] = count;
                        queue.push_back((yy, xx));
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < h {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < w {
                    visit(y, x + 1);
                }
            }
        }
    }
    (labels, count as usize)
}

/// Outer boundaries of the mask's components, one polygon per 4-connected
/// component. Vertices lie on pixel corners as `[x, y]`; a pixel at
/// `(row, col)` spans `[col, col+1] x [row, row+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub polygons: Vec<Vec<[i64; 2]>>,
    pub areas: Vec<f64>,
}

/// Shoelace area in pixel coordinates (y down). Polygons from
/// [`extract_contours`] run counter-clockwise on screen and come out negative.
pub fn signed_area(poly: &[[i64; 2]]) -> f64 {
    let n = poly.len();
    let twice: i64 = (0..n)
        .map(|i| {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice as f64 / 2.0
}

fn is_label(labels: &Array2<u32>, label: u32, x: i64, y: i64) -> bool {
    let (h, w) = labels.dim();
    x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && labels[[y as usize, x as usize]] == label
}

/// Pixel in the quadrant `(sx, sy)` around vertex `(x, y)`.
fn quadrant(x: i64, y: i64, sx: i64, sy: i64) -> (i64, i64) {
    (if sx > 0 { x } else { x - 1 }, if sy > 0 { y } else { y - 1 })
}

/// Follows the cracks between pixels with the component kept on the left,
/// starting at the top edge of its first pixel in scan order. Only vertices
/// where the direction changes are kept.
fn trace(labels: &Array2<u32>, label: u32, start_row: usize, start_col: usize) -> Vec<[i64; 2]> {
    let start = (start_col as i64 + 1, start_row as i64);
    let start_dir = (-1i64, 0i64);
    let (mut x, mut y) = start;
    let mut d = start_dir;
    let mut poly = Vec::new();
    loop {
        x += d.0;
        y += d.1;
        let left = (d.1, -d.0);
        let right = (-d.1, d.0);
        let (alx, aly) = quadrant(x, y, d.0 + left.0, d.1 + left.1);
        let (arx, ary) = quadrant(x, y, d.0 + right.0, d.1 + right.1);
        let next = if !is_label(labels, label, alx, aly) {
            left
        } else if is_label(labels, label, arx, ary) {
            right
        } else {
            d
        };
        if next != d {
            poly.push([x, y]);
        }
        d = next;
        if (x, y) == start && d == start_dir {
            break;
        }
    }
    poly
}

pub fn extract_contours(mask: &BinaryMask) -> Result<ContourSet, ExpandError> {
    if mask.is_empty() {
        return Err(ExpandError::EmptyMask);
    }
    let (labels, count) = label_components(mask);
    let mut first = vec![None; count];
    for ((r, c), &l) in labels.indexed_iter() {
        if l != 0 && first[l as usize - 1].is_none() {
            first[l as usize - 1] = Some((r, c));
        }
    }
    let polygons: Vec<Vec<[i64; 2]>> = first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (r, c) = p.expect("every label has a pixel");
            trace(&labels, i as u32 + 1, r, c)
        })
        .collect();
    let areas = polygons.iter().map(|p| signed_area(p).abs()).collect();
    Ok(ContourSet { polygons, areas })
}
