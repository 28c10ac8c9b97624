use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::AnalyzeError;

const COLORS: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Square scatter plot of 2D points coloured by label.
pub fn scatter_image(points: &Array2<f64>, labels: &[usize], size: u32) -> Result<RgbImage, AnalyzeError> {
    if points.ncols() != 2 || points.nrows() != labels.len() {
        return Err(AnalyzeError::Validation("scatter needs N x 2 points and N labels".into()));
    }
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if points.nrows() == 0 {
        return Ok(img);
    }
    let col = |k: usize| points.column(k).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ((x0, x1), (y0, y1)) = (col(0), col(1));
    let margin = 8.0;
    let span = (size as f64 - 2.0 * margin).max(1.0);
    let map = |v: f64, lo: f64, hi: f64| margin + if hi > lo { (v - lo) / (hi - lo) * span } else { span / 2.0 };
    for (row, &label) in points.rows().into_iter().zip(labels) {
        let cx = map(row[0], x0, x1).round() as i64;
        let cy = (size as f64 - map(row[1], y0, y1)).round() as i64;
        let color = Rgb(COLORS[label % COLORS.len()]);
        for dy in -2..=2 {
            for dx in -2..=2 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    Ok(img)
}

pub fn write_points_csv(path: &Path, points: &Array2<f64>, labels: &[usize]) -> Result<(), AnalyzeError> {
    let mut out = String::from("x,y,label\n");
    for (row, l) in points.rows().into_iter().zip(labels) {
        out.push_str(&format!("{},{},{l}\n", row[0], row[1]));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AnalyzeError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, out).map_err(|e| AnalyzeError::Io(format!("{}: {e}", path.display())))
}

/// Blue→red ramp over `[0, 1]`.
fn ramp(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0),
        (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0),
        (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0),
    ]
}

/// Blends a heatmap over the image with weight `alpha`.
pub fn heatmap_overlay(image: &RgbImage, heatmap: &Array2<f64>, alpha: f64) -> Result<RgbImage, AnalyzeError> {
    let (w, h) = image.dimensions();
    if heatmap.dim() != (h as usize, w as usize) {
        return Err(AnalyzeError::Validation(format!(
            "heatmap {:?} does not match image {h}x{w}",
            heatmap.dim()
        )));
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let c = ramp(heatmap[[y as usize, x as usize]]);
        let p = image.get_pixel(x, y).0;
        Rgb(std::array::from_fn(|k| {
            ((1.0 - alpha) * p[k] as f64 + alpha * 255.0 * c[k]).round().clamp(0.0, 255.0) as u8
        }))
    }))
}
