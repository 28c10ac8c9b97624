//! Out-of-process model plug-ins.
//!
//! The real detectors, SAM and DINOv2 run outside this process (they need a
//! Python/GPU stack). A plug-in is any shell command: it receives one JSON
//! request on stdin and answers with one JSON document on stdout.
//!
//! ```text
//! detect  -> {"task":"detect","image":PATH,"variant":..,"checkpoint":..,"vocabulary":[..]}
//!         <- [{"box":{"x":..,"y":..,"w":..,"h":..},"score":..,"label":..}, ...]
//! segment -> {"task":"segment","image":PATH,"variant":..,"checkpoint":..,"box":{..}}
//!         <- {"height":..,"width":..,"counts":[..]}
//! embed   -> {"task":"embed","image":PATH,"variant":..,"checkpoint":..}
//!         <- {"embedding":[..]}
//! ```

use std::io::Write;
use std::process::{Command, Stdio};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde_json::json;

use super::{
    checkpoint_env_var, command_env_var, Detection, DetectorBackend, DetectorConfig, FeatureExtractor,
    InputImage, ModelError, SegmenterBackend,
};
use crate::manifest::{BinaryMask, BoundingBox, SegmentationMask};

#[derive(Debug, Clone)]
struct Plugin {
    id: String,
    command: String,
    variant: String,
    checkpoint: Option<String>,
}

impl Plugin {
    fn from_env(id: &str, variant: &str) -> Result<Self, ModelError> {
        let var = command_env_var(id);
        let command = std::env::var(&var).map_err(|_| ModelError::BackendUnavailable {
            id: id.into(),
            hint: format!("set {var} to the plug-in command line"),
        })?;
        Ok(Self {
            id: id.into(),
            command,
            variant: variant.into(),
            checkpoint: std::env::var(checkpoint_env_var(id)).ok(),
        })
    }

    fn call<T: DeserializeOwned>(&self, task: &str, image: InputImage<'_>, extra: serde_json::Value) -> Result<T, ModelError> {
        let fail = |message: String| ModelError::Backend {
            id: self.id.clone(),
            message,
        };
        // Always hand the plug-in a lossless copy of the raster we hold.
        let tmp = tempfile::Builder::new()
            .suffix(".png")
            .tempfile()
            .map_err(|e| fail(e.to_string()))?;
        image
            .pixels
            .save_with_format(tmp.path(), image::ImageFormat::Png)
            .map_err(|e| fail(e.to_string()))?;

        let mut request = json!({
            "task": task,
            "image": tmp.path(),
            "source": image.path,
            "variant": self.variant,
            "checkpoint": self.checkpoint,
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (request.as_object_mut(), extra) {
            obj.extend(more);
        }

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn `{}`: {e}", self.command)))?;
        // a plug-in may exit before reading its request; its exit status wins
        let written = child
            .stdin
            .take()
            .expect("piped")
            .write_all(request.to_string().as_bytes());
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        written.map_err(|e| fail(format!("writing request: {e}")))?;
        serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad response: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct ExternalDetector(Plugin);

impl ExternalDetector {
    pub fn from_env(id: &str, variant: &str) -> Result<Self, ModelError> {
        Plugin::from_env(id, variant).map(Self)
    }

    pub fn new(id: &str, command: &str, variant: &str) -> Self {
        Self(Plugin {
            id: id.into(),
            command: command.into(),
            variant: variant.into(),
            checkpoint: None,
        })
    }
}

impl DetectorBackend for ExternalDetector {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn propose(&self, image: InputImage<'_>, config: &DetectorConfig) -> Result<Vec<Detection>, ModelError> {
        self.0.call("detect", image, json!({ "vocabulary": config.vocabulary }))
    }
}

#[derive(Debug, Clone)]
pub struct ExternalSegmenter(Plugin);

impl ExternalSegmenter {
    pub fn from_env(id: &str, variant: &str) -> Result<Self, ModelError> {
        Plugin::from_env(id, variant).map(Self)
    }

    pub fn new(id: &str, command: &str, variant: &str) -> Self {
        Self(Plugin {
            id: id.into(),
            command: command.into(),
            variant: variant.into(),
            checkpoint: None,
        })
    }
}

impl SegmenterBackend for ExternalSegmenter {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn segment_box(&self, image: InputImage<'_>, prompt: &BoundingBox) -> Result<BinaryMask, ModelError> {
        let rle: SegmentationMask = self.0.call("segment", image, json!({ "box": prompt }))?;
        rle.decode().map_err(|e| ModelError::Backend {
            id: self.0.id.clone(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExternalExtractor {
    plugin: Plugin,
    dim: usize,
}

impl ExternalExtractor {
    pub fn from_env(id: &str, dim: usize) -> Result<Self, ModelError> {
        Plugin::from_env(id, "").map(|plugin| Self { plugin, dim })
    }
}

#[derive(serde::Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl FeatureExtractor for ExternalExtractor {
    fn id(&self) -> &str {
        &self.plugin.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &RgbImage) -> Result<Vec<f64>, ModelError> {
        let r: EmbedResponse = self.plugin.call("embed", InputImage::new(image), json!({}))?;
        Ok(r.embedding)
    }
}
