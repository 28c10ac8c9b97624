use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::manifest::{DatasetManifest, Split};
use crate::models::{extract_features, FeatureExtractor, FeatureExtractorConfig};
use crate::pipeline::load_rgb;

/// Features and labels of one split of one manifest. `paths` lists the
/// image files behind the rows when they exist.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub paths: Vec<PathBuf>,
}

pub trait DataLoader: Send + Sync {
    fn load(&self, manifest: &str, split: Split) -> Result<LabeledFeatures, BenchError>;
}

/// Class signal in the first `signal_dims` features plus class-independent
/// high-variance noise in the remaining `noise_dims`, standing in for
/// background clutter. The foreground variant is the same samples with the
/// noise dims set to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub signal_dims: usize,
    pub noise_dims: usize,
    /// Standard deviation of the class means around the origin.
    pub separation: f64,
    pub signal_sigma: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            train_per_class: 12,
            test_per_class: 50,
            signal_dims: 4,
            noise_dims: 60,
            separation: 1.5,
            signal_sigma: 1.0,
            noise_sigma: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures {
    pub source: Array2<f64>,
    pub fg: Array2<f64>,
    pub labels: Vec<usize>,
}

impl SyntheticFeatures {
    /// `per_class` samples of every class. Class means depend on
    /// `means_seed` only, so splits drawn with different `sample_seed`s share
    /// the same classes.
    pub fn generate(spec: &SyntheticSpec, per_class: usize, means_seed: u64, sample_seed: u64) -> Self {
        let mut mrng = ChaCha8Rng::seed_from_u64(means_seed);
        let sep = Normal::new(0.0, spec.separation).expect("separation must be finite and >= 0");
        let means = Array2::from_shape_simple_fn((spec.classes, spec.signal_dims), || sep.sample(&mut mrng));

        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let sig = Normal::new(0.0, spec.signal_sigma).expect("signal_sigma must be finite and >= 0");
        let noise = Normal::new(0.0, spec.noise_sigma).expect("noise_sigma must be finite and >= 0");
        let n = spec.classes * per_class;
        let d = spec.signal_dims + spec.noise_dims;
        let mut source = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            labels.push(c);
            for j in 0..spec.signal_dims {
                source[[i, j]] = means[[c, j]] + sig.sample(&mut rng);
            }
            for j in spec.signal_dims..d {
                source[[i, j]] = noise.sample(&mut rng);
            }
        }
        let mut fg = source.clone();
        fg.slice_mut(s![.., spec.signal_dims..]).fill(0.0);
        Self { source, fg, labels }
    }
}

/// Serves `<name>` and `<name>_FG` from a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticLoader {
    pub name: String,
    pub spec: SyntheticSpec,
    pub seed: u64,
}

impl SyntheticLoader {
    pub fn new(name: &str, spec: SyntheticSpec, seed: u64) -> Self {
        Self {
            name: name.into(),
            spec,
            seed,
        }
    }

    pub fn fg_name(&self) -> String {
        format!("{}_FG", self.name)
    }
}

impl DataLoader for SyntheticLoader {
    fn load(&self, manifest: &str, split: Split) -> Result<LabeledFeatures, BenchError> {
        let fg = if manifest == self.name {
            false
        } else if manifest == self.fg_name() {
            true
        } else {
            return Err(BenchError::MissingManifest(manifest.into()));
        };
        let (per_class, stream) = match split {
            Split::Train => (self.spec.train_per_class, 1),
            Split::Test => (self.spec.test_per_class, 2),
        };
        let data = SyntheticFeatures::generate(
            &self.spec,
            per_class,
            self.seed,
            self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream),
        );
        Ok(LabeledFeatures {
            features: if fg { data.fg } else { data.source },
            labels: data.labels,
            classes: (0..self.spec.classes).map(|c| format!("class_{c}")).collect(),
            paths: Vec::new(),
        })
    }
}

/// Embeds manifest images with a frozen feature extractor. Source manifests
/// read `source_path` under their root; derived manifests read `fg_path`
/// and skip records that have none.
pub struct ManifestLoader {
    manifests: HashMap<String, (DatasetManifest, PathBuf)>,
    extractor: Arc<dyn FeatureExtractor>,
    config: FeatureExtractorConfig,
}

impl ManifestLoader {
    pub fn new(extractor: Arc<dyn FeatureExtractor>, config: FeatureExtractorConfig) -> Self {
        Self {
            manifests: HashMap::new(),
            extractor,
            config,
        }
    }

    pub fn add(&mut self, manifest: DatasetManifest, image_root: impl Into<PathBuf>) {
        self.manifests
            .insert(manifest.name.clone(), (manifest, image_root.into()));
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.manifests.keys().cloned().collect();
        v.sort();
        v
    }
}

impl DataLoader for ManifestLoader {
    fn load(&self, name: &str, split: Split) -> Result<LabeledFeatures, BenchError> {
        let (manifest, root) = self
            .manifests
            .get(name)
            .ok_or_else(|| BenchError::MissingManifest(name.into()))?;
        let derived = manifest.provenance.source != "original";
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        for r in manifest.records.iter().filter(|r| r.split == split) {
            let rel = if derived { r.fg_path.as_deref() } else { Some(r.source_path.as_str()) };
            if let Some(rel) = rel {
                paths.push(root.join(rel));
                labels.push(r.class_id as usize);
            }
        }
        if paths.is_empty() {
            return Err(BenchError::Validation(format!("`{name}` has no usable {split:?} images")));
        }
        let images: Vec<RgbImage> = paths.iter().map(|p| load_rgb(p)).collect::<Result<_, _>>()?;
        Ok(LabeledFeatures {
            features: extract_features(self.extractor.as_ref(), &images, &self.config)?,
            labels,
            classes: manifest.classes.clone(),
            paths,
        })
    }
}
