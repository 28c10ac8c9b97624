use image::RgbImage;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnalyzeError;

/// Activations of one layer and the gradient of the target class score
/// with respect to them, both `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCapture {
    pub activations: Array3<f64>,
    pub gradients: Array3<f64>,
}

/// A classifier that can report a layer's activations and the target score
/// gradient at that layer for one input.
pub trait CamModel {
    fn capture(&self, input: &Array3<f64>, target_class: usize, layer: &str) -> Result<LayerCapture, AnalyzeError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamComputation {
    pub activations: Array3<f64>,
    pub gradients: Array3<f64>,
    /// Spatial mean of each channel's gradient.
    pub weights: Vec<f64>,
    /// At the requested output resolution, in `[0, 1]`.
    pub heatmap: Array2<f64>,
    /// Set when the map was constant before normalization; the heatmap is
    /// then all zeros (zero map) or all ones (constant positive map).
    pub degenerate: bool,
}

pub fn grad_cam(
    model: &dyn CamModel,
    input: &Array3<f64>,
    target_class: usize,
    layer: &str,
) -> Result<CamComputation, AnalyzeError> {
    let (_, h, w) = input.dim();
    let capture = model.capture(input, target_class, layer)?;
    cam_from_capture(capture, h, w)
}

/// ReLU(Σ_k α_k A_k), bilinearly resized to `out_h x out_w`, min-max normalized.
pub fn cam_from_capture(capture: LayerCapture, out_h: usize, out_w: usize) -> Result<CamComputation, AnalyzeError> {
    let LayerCapture { activations, gradients } = capture;
    if activations.dim() != gradients.dim() {
        return Err(AnalyzeError::Validation(format!(
            "activations {:?} vs gradients {:?}",
            activations.dim(),
            gradients.dim()
        )));
    }
    let (c, h, w) = activations.dim();
    if c == 0 || h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(AnalyzeError::Validation("empty activation map or output size".into()));
    }
    let weights: Vec<f64> = gradients
        .outer_iter()
        .map(|g| g.sum() / (h * w) as f64)
        .collect();
    let mut cam = Array2::<f64>::zeros((h, w));
    for (k, a) in activations.outer_iter().enumerate() {
        cam.scaled_add(weights[k], &a);
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let mut heatmap = bilinear_resize(&cam, out_h, out_w);
    let lo = heatmap.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = heatmap.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let degenerate = !(hi > lo);
    if degenerate {
        heatmap.fill(if hi > 0.0 { 1.0 } else { 0.0 });
    } else {
        heatmap.mapv_inplace(|v| (v - lo) / (hi - lo));
    }
    Ok(CamComputation {
        activations,
        gradients,
        weights,
        heatmap,
        degenerate,
    })
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn bilinear_resize(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let coord = |dst: usize, n_in: usize, n_out: usize| {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = coord(y, h, out_h);
        let (x0, x1, fx) = coord(x, w, out_w);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// `(3, height, width)` tensor with values in `[0, 1]`.
pub fn image_tensor(image: &RgbImage) -> Array3<f64> {
    let (w, h) = image.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        image.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

/// conv3x3 → ReLU → conv3x3 → ReLU → global average pool → linear.
/// Small enough to differentiate by hand; used for checks and demos.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyConvNet {
    pub w1: Array4<f64>,
    pub b1: Array1<f64>,
    pub w2: Array4<f64>,
    pub b2: Array1<f64>,
    pub fc: Array2<f64>,
    pub fc_bias: Array1<f64>,
}

pub const TINY_LAYERS: [&str; 2] = ["conv1", "conv2"];

fn conv3x3(x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (cin, h, wd) = x.dim();
    let cout = w.dim().0;
    let mut out = Array3::zeros((cout, h, wd));
    for k in 0..cout {
        for i in 0..h {
            for j in 0..wd {
                let mut s = b[k];
                for c in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (y, xx) = (i + dy, j + dx);
                            if y >= 1 && xx >= 1 && y - 1 < h && xx - 1 < wd {
                                s += w[[k, c, dy, dx]] * x[[c, y - 1, xx - 1]];
                            }
                        }
                    }
                }
                out[[k, i, j]] = s;
            }
        }
    }
    out
}

/// Gradient with respect to the input of a zero-padded 3x3 convolution.
fn conv3x3_backward(grad_out: &Array3<f64>, w: &Array4<f64>, cin: usize) -> Array3<f64> {
    let (cout, h, wd) = grad_out.dim();
    let mut g = Array3::zeros((cin, h, wd));
    for k in 0..cout {
        for i in 0..h {
            for j in 0..wd {
                let go = grad_out[[k, i, j]];
                if go == 0.0 {
                    continue;
                }
                for c in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (y, xx) = (i + dy, j + dx);
                            if y >= 1 && xx >= 1 && y - 1 < h && xx - 1 < wd {
                                g[[c, y - 1, xx - 1]] += w[[k, c, dy, dx]] * go;
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

fn relu(x: Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

impl TinyConvNet {
    pub fn random(in_channels: usize, c1: usize, c2: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.5).expect("valid sigma");
        let mut draw = |shape: &[usize]| -> Vec<f64> { (0..shape.iter().product()).map(|_| n.sample(&mut rng)).collect() };
        Self {
            w1: Array4::from_shape_vec((c1, in_channels, 3, 3), draw(&[c1, in_channels, 3, 3])).unwrap(),
            b1: Array1::from(draw(&[c1])),
            w2: Array4::from_shape_vec((c2, c1, 3, 3), draw(&[c2, c1, 3, 3])).unwrap(),
            b2: Array1::from(draw(&[c2])),
            fc: Array2::from_shape_vec((classes, c2), draw(&[classes, c2])).unwrap(),
            fc_bias: Array1::from(draw(&[classes])),
        }
    }

    pub fn classes(&self) -> usize {
        self.fc.nrows()
    }

    fn head(&self, a2: &Array3<f64>) -> Array1<f64> {
        let pooled = a2.mean_axis(Axis(2)).unwrap().mean_axis(Axis(1)).unwrap();
        self.fc.dot(&pooled) + &self.fc_bias
    }

    pub fn scores(&self, input: &Array3<f64>) -> Array1<f64> {
        let a1 = relu(conv3x3(input, &self.w1, &self.b1));
        self.head(&relu(conv3x3(&a1, &self.w2, &self.b2)))
    }

    /// Target score as a function of one layer's (post-ReLU) activations.
    pub fn score_from(&self, layer: &str, activations: &Array3<f64>, target: usize) -> Result<f64, AnalyzeError> {
        let a2 = match layer {
            "conv1" => relu(conv3x3(activations, &self.w2, &self.b2)),
            "conv2" => activations.clone(),
            other => return Err(unknown_layer(other)),
        };
        Ok(self.head(&a2)[target])
    }
}

fn unknown_layer(layer: &str) -> AnalyzeError {
    match layer {
        "pool" | "fc" => AnalyzeError::NonSpatialLayer(layer.into()),
        other => AnalyzeError::Validation(format!("unknown layer `{other}`")),
    }
}

impl CamModel for TinyConvNet {
    fn capture(&self, input: &Array3<f64>, target: usize, layer: &str) -> Result<LayerCapture, AnalyzeError> {
        if target >= self.classes() {
            return Err(AnalyzeError::Validation(format!(
                "class {target} outside {} classes",
                self.classes()
            )));
        }
        if !TINY_LAYERS.contains(&layer) {
            return Err(unknown_layer(layer));
        }
        let a1 = relu(conv3x3(input, &self.w1, &self.b1));
        let z2 = conv3x3(&a1, &self.w2, &self.b2);
        let a2 = relu(z2.clone());
        let (c2, h, w) = a2.dim();
        let g2 = Array3::from_shape_fn((c2, h, w), |(k, _, _)| self.fc[[target, k]] / (h * w) as f64);
        if layer == "conv2" {
            return Ok(LayerCapture {
                activations: a2,
                gradients: g2,
            });
        }
        let g2_pre = Array3::from_shape_fn(z2.dim(), |ix| if z2[ix] > 0.0 { g2[ix] } else { 0.0 });
        Ok(LayerCapture {
            gradients: conv3x3_backward(&g2_pre, &self.w2, a1.dim().0),
            activations: a1,
        })
    }
}
