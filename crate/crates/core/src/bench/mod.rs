//! Cross-evaluation between a source dataset and its foreground variant:
//! train on either, test on either, per backbone.

mod data;
mod report;
mod store;
mod trainer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{DataLoader, LabeledFeatures, ManifestLoader, SyntheticFeatures, SyntheticLoader, SyntheticSpec};
pub use report::{
    backbone_label, default_backbones, infer_pairs, render_bar_chart_svg, row_means, summarize_claims,
    published_cross_eval, ClaimSummary, Improvement, ReferenceClaims, ResultRow, ResultTable,
};
pub use store::ResultsStore;
pub use trainer::{ExternalTrainer, ToyLinear, Trainer, TrainerRegistry, REAL_BACKBONES, TOY_LINEAR};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("manifest `{0}` is not available to the data loader")]
    MissingManifest(String),
    #[error("trainer backend `{id}` unavailable: {hint}")]
    BackendUnavailable { id: String, hint: String },
    #[error("trainer `{id}` failed: {message}")]
    Trainer { id: String, message: String },
    #[error("incomplete result blocks, missing: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("results store {path}: {message}")]
    Store { path: String, message: String },
}

/// One cell of the cross-evaluation table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub train: String,
    pub test: String,
    pub backbone: String,
    pub seed: u64,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, String>,
}

impl ExperimentSpec {
    pub fn new(train: &str, test: &str, backbone: &str, seed: u64) -> Self {
        Self {
            train: train.into(),
            test: test.into(),
            backbone: backbone.into(),
            seed,
            hyperparams: BTreeMap::new(),
        }
    }

    pub fn digest(&self) -> String {
        crate::config::digest_of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub top1: f64,
    pub per_class: BTreeMap<String, f64>,
    pub n_test: usize,
}

/// The four train/test pairings for each backbone, in the order
/// S→S, S→FG, FG→FG, FG→S.
pub fn make_cross_protocol(
    source: &str,
    fg: &str,
    backbones: &[&str],
    seed: u64,
) -> Result<Vec<ExperimentSpec>, BenchError> {
    if source == fg {
        return Err(BenchError::Config(format!(
            "source and foreground manifests are both `{source}`"
        )));
    }
    if backbones.is_empty() {
        return Err(BenchError::Config("no backbones given".into()));
    }
    Ok(backbones
        .iter()
        .flat_map(|b| {
            protocol_rows(source, fg)
                .into_iter()
                .map(move |(train, test)| ExperimentSpec::new(train, test, b, seed))
        })
        .collect())
}

/// Row labels of the cross table for one dataset pair.
pub fn protocol_rows<'a>(source: &'a str, fg: &'a str) -> [(&'a str, &'a str); 4] {
    [(source, source), (source, fg), (fg, fg), (fg, source)]
}

/// Top-1 accuracy in percent.
pub fn evaluate_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, BenchError> {
    if predictions.len() != labels.len() {
        return Err(BenchError::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(BenchError::Validation("no test samples".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn per_class_accuracy(predictions: &[usize], labels: &[usize], classes: &[String]) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = tally.entry(*l).or_default();
        e.0 += (p == l) as usize;
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(c, (hit, n))| {
            let name = classes.get(c).cloned().unwrap_or_else(|| c.to_string());
            (name, 100.0 * hit as f64 / n as f64)
        })
        .collect()
}

/// Trains on `spec.train`, evaluates on the test split of `spec.test`. With a
/// store, a spec whose digest is already present is not rerun.
pub fn run_experiment(
    spec: &ExperimentSpec,
    trainers: &TrainerRegistry,
    loader: &dyn DataLoader,
    store: Option<&mut ResultsStore>,
) -> Result<ExperimentResult, BenchError> {
    if let Some(hit) = store.as_ref().and_then(|s| s.get(&spec.digest())) {
        return Ok(hit.clone());
    }
    let trainer = trainers.get(&spec.backbone)?;
    let train = loader.load(&spec.train, crate::manifest::Split::Train)?;
    let test = loader.load(&spec.test, crate::manifest::Split::Test)?;
    if train.classes != test.classes {
        return Err(BenchError::Validation(format!(
            "`{}` and `{}` have different class lists",
            spec.train, spec.test
        )));
    }
    let predictions = trainer.fit_predict(&train, &test, spec)?;
    let result = ExperimentResult {
        spec: spec.clone(),
        top1: evaluate_accuracy(&predictions, &test.labels)?,
        per_class: per_class_accuracy(&predictions, &test.labels, &test.classes),
        n_test: test.labels.len(),
    };
    if let Some(store) = store {
        store.put(&result)?;
    }
    Ok(result)
}
