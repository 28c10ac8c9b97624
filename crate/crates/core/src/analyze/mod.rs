//! Embedding projection, cluster separation metrics and Grad-CAM saliency.

mod cam;
mod cluster;
mod render;
mod tsne;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cam::{
    bilinear_resize, cam_from_capture, grad_cam, image_tensor, CamComputation, CamModel, LayerCapture, TinyConvNet,
    TINY_LAYERS,
};
pub use cluster::{cluster_metrics, ClusterReport};
pub use render::{heatmap_overlay, scatter_image, write_points_csv};
pub use tsne::{tsne_embed, TsneConfig, TsneOutput};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("layer `{0}` has no spatial activations")]
    NonSpatialLayer(String),
    #[error("io: {0}")]
    Io(String),
}

/// Which space the cluster metrics are computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSpace {
    /// The embeddings as handed in.
    #[default]
    Embedding,
    /// The 2D t-SNE projection.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub tsne: TsneConfig,
    pub metric_space: MetricSpace,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            tsne: TsneConfig::default(),
            metric_space: MetricSpace::Embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionComparison {
    pub source: ClusterReport,
    pub fg: ClusterReport,
    pub source_2d: Array2<f64>,
    pub fg_2d: Array2<f64>,
}

/// Projects both embedding sets with the same t-SNE settings and reports
/// cluster metrics for each side.
pub fn compare_distributions(
    source: (&Array2<f64>, &[usize]),
    fg: (&Array2<f64>, &[usize]),
    config: &CompareConfig,
) -> Result<DistributionComparison, AnalyzeError> {
    if source.0.ncols() != fg.0.ncols() {
        return Err(AnalyzeError::Validation(format!(
            "embedding dims differ: {} vs {}; both sides must come from the same extractor",
            source.0.ncols(),
            fg.0.ncols()
        )));
    }
    let source_2d = tsne_embed(source.0, &config.tsne)?.embedding;
    let fg_2d = tsne_embed(fg.0, &config.tsne)?.embedding;
    let (s_space, f_space) = match config.metric_space {
        MetricSpace::Embedding => (source.0, fg.0),
        MetricSpace::Projection => (&source_2d, &fg_2d),
    };
    Ok(DistributionComparison {
        source: cluster_metrics(s_space, source.1)?,
        fg: cluster_metrics(f_space, fg.1)?,
        source_2d,
        fg_2d,
    })
}
