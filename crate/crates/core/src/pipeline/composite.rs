use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::manifest::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fill {
    Color([u8; 3]),
    Transparent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormatPolicy {
    #[default]
    MirrorSource,
    ForcePng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeConfig {
    pub fill: Fill,
    pub output_format: OutputFormatPolicy,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self {
            fill: Fill::Color([255, 255, 255]),
            output_format: OutputFormatPolicy::MirrorSource,
        }
    }
}

impl CompositeConfig {
    pub fn transparent() -> Self {
        Self {
            fill: Fill::Transparent,
            output_format: OutputFormatPolicy::ForcePng,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.fill == Fill::Transparent && self.output_format != OutputFormatPolicy::ForcePng {
            return Err(PipelineError::Config(
                "transparent fill needs output_format = force-png".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Composite {
    Rgb(RgbImage),
    Rgba(RgbaImage),
}

impl Composite {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            Composite::Rgb(i) => i.dimensions(),
            Composite::Rgba(i) => i.dimensions(),
        }
    }

    /// Writes with the format implied by the extension. JPEG is written at
    /// quality 95 since the output replaces the source image.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let format = ImageFormat::from_path(path)?;
        match (self, format) {
            (Composite::Rgb(img), ImageFormat::Jpeg) => {
                let f = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
                JpegEncoder::new_with_quality(BufWriter::new(f), 95).encode_image(img)?;
            }
            (Composite::Rgb(img), _) => img.save_with_format(path, format)?,
            (Composite::Rgba(img), _) => img.save_with_format(path, format)?,
        }
        Ok(())
    }
}

/// Keeps source pixels under the mask and replaces everything else with the
/// fill. The mask covers the whole frame; nothing is cropped.
pub fn compose_foreground(
    image: &RgbImage,
    mask: &BinaryMask,
    config: &CompositeConfig,
) -> Result<Composite, PipelineError> {
    let (w, h) = image.dimensions();
    mask.ensure_dims(h, w)?;
    Ok(match config.fill {
        Fill::Color(fill) => Composite::Rgb(RgbImage::from_fn(w, h, |x, y| {
            if mask.get(y as usize, x as usize) {
                *image.get_pixel(x, y)
            } else {
                Rgb(fill)
            }
        })),
        Fill::Transparent => Composite::Rgba(RgbaImage::from_fn(w, h, |x, y| {
            if mask.get(y as usize, x as usize) {
                let Rgb([r, g, b]) = *image.get_pixel(x, y);
                Rgba([r, g, b, 255])
            } else {
                Rgba([0, 0, 0, 0])
            }
        })),
    })
}

/// Relative output path for a source path under the given policy.
pub fn foreground_path(source_path: &str, policy: OutputFormatPolicy) -> String {
    match policy {
        OutputFormatPolicy::MirrorSource => source_path.to_string(),
        OutputFormatPolicy::ForcePng => Path::new(source_path)
            .with_extension("png")
            .to_string_lossy()
            .replace('\\', "/"),
    }
}
