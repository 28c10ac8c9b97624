use std::collections::HashMap;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use serde_json::json;

use super::{BenchError, ExperimentSpec, LabeledFeatures};
use crate::models::command_env_var;

pub const TOY_LINEAR: &str = "toy-linear";

/// Backbone ids of the fine-tuning backends, in table column order.
pub const REAL_BACKBONES: [&str; 4] = ["vit-b16", "resnet50", "swinv2-b", "convnext-b"];

pub trait Trainer: Send + Sync {
    fn id(&self) -> &str;
    /// Fits on `train` and returns one predicted class id per test sample.
    fn fit_predict(
        &self,
        train: &LabeledFeatures,
        test: &LabeledFeatures,
        spec: &ExperimentSpec,
    ) -> Result<Vec<usize>, BenchError>;
}

/// Multinomial logistic regression on standardized features, trained with
/// full-batch gradient descent from a seeded initialization.
///
/// Hyperparameters, read from the experiment spec's map and all optional:
/// `epochs` (300), `lr` (0.5), `l2` (1e-3).
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyLinear;

fn param<T: std::str::FromStr>(spec: &ExperimentSpec, key: &str, default: T) -> Result<T, BenchError> {
    match spec.hyperparams.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| BenchError::Config(format!("hyperparameter {key} = `{v}` does not parse"))),
    }
}

impl ToyLinear {
    fn standardize(train: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let mean = train.mean_axis(Axis(0)).expect("non-empty");
        let std = train
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        (mean, std)
    }
}

impl Trainer for ToyLinear {
    fn id(&self) -> &str {
        TOY_LINEAR
    }

    fn fit_predict(
        &self,
        train: &LabeledFeatures,
        test: &LabeledFeatures,
        spec: &ExperimentSpec,
    ) -> Result<Vec<usize>, BenchError> {
        let epochs: usize = param(spec, "epochs", 300)?;
        let lr: f64 = param(spec, "lr", 0.5)?;
        let l2: f64 = param(spec, "l2", 1e-3)?;
        let (n, d) = train.features.dim();
        let k = train.classes.len();
        if n == 0 || k == 0 {
            return Err(BenchError::Validation("empty training set".into()));
        }
        if test.features.ncols() != d {
            return Err(BenchError::Validation(format!(
                "train has {d} features, test has {}",
                test.features.ncols()
            )));
        }
        let (mean, std) = Self::standardize(&train.features);
        let x = (&train.features - &mean) / &std;

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let init = Normal::new(0.0, 0.01).expect("valid sigma");
        let mut w = Array2::from_shape_simple_fn((d, k), || init.sample(&mut rng));
        let mut b = Array1::<f64>::zeros(k);
        let mut onehot = Array2::<f64>::zeros((n, k));
        for (i, &l) in train.labels.iter().enumerate() {
            if l >= k {
                return Err(BenchError::Validation(format!("label {l} outside {k} classes")));
            }
            onehot[[i, l]] = 1.0;
        }
        for _ in 0..epochs {
            let mut p = x.dot(&w) + &b;
            for mut row in p.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row /= s;
            }
            let err = (p - &onehot) / n as f64;
            let gw = x.t().dot(&err) + &w * l2;
            let gb = err.sum_axis(Axis(0));
            w.scaled_add(-lr, &gw);
            b.scaled_add(-lr, &gb);
        }
        let xt = (&test.features - &mean) / &std;
        let scores = xt.dot(&w) + &b;
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}

/// A fine-tuning job run by an external command. The command receives the
/// spec, class list and image paths as JSON on stdin and prints
/// `{"predictions": [..]}`.
#[derive(Debug, Clone)]
pub struct ExternalTrainer {
    id: String,
    command: String,
}

impl ExternalTrainer {
    pub fn new(id: &str, command: &str) -> Self {
        Self {
            id: id.into(),
            command: command.into(),
        }
    }

    pub fn from_env(id: &str) -> Result<Self, BenchError> {
        let var = command_env_var(id);
        match std::env::var(&var) {
            Ok(cmd) if !cmd.trim().is_empty() => Ok(Self::new(id, &cmd)),
            _ => Err(BenchError::BackendUnavailable {
                id: id.into(),
                hint: format!("set {var} to a training command"),
            }),
        }
    }
}

#[derive(Deserialize)]
struct TrainerReply {
    predictions: Vec<usize>,
}

impl Trainer for ExternalTrainer {
    fn id(&self) -> &str {
        &self.id
    }

    fn fit_predict(
        &self,
        train: &LabeledFeatures,
        test: &LabeledFeatures,
        spec: &ExperimentSpec,
    ) -> Result<Vec<usize>, BenchError> {
        let fail = |message: String| BenchError::Trainer {
            id: self.id.clone(),
            message,
        };
        if train.paths.is_empty() || test.paths.is_empty() {
            return Err(fail("external trainers need image paths; use a manifest data loader".into()));
        }
        let request = json!({
            "spec": spec,
            "classes": train.classes,
            "train": { "paths": train.paths, "labels": train.labels },
            "test": { "paths": test.paths },
        });
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let written = child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(request.to_string().as_bytes());
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exit {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        written.map_err(|e| fail(e.to_string()))?;
        let reply: TrainerReply = serde_json::from_slice(&out.stdout).map_err(|e| fail(e.to_string()))?;
        if reply.predictions.len() != test.labels.len() {
            return Err(fail(format!(
                "{} predictions for {} test images",
                reply.predictions.len(),
                test.labels.len()
            )));
        }
        Ok(reply.predictions)
    }
}

/// `toy-linear` is always present; the real backbone ids resolve to
/// external trainers configured through the environment.
#[derive(Default, Clone)]
pub struct TrainerRegistry {
    trainers: HashMap<String, Arc<dyn Trainer>>,
}

impl TrainerRegistry {
    pub fn register(&mut self, trainer: Arc<dyn Trainer>) {
        self.trainers.insert(trainer.id().to_string(), trainer);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Trainer>, BenchError> {
        if let Some(t) = self.trainers.get(id) {
            return Ok(t.clone());
        }
        match id {
            TOY_LINEAR => Ok(Arc::new(ToyLinear)),
            _ if REAL_BACKBONES.contains(&id) => Ok(Arc::new(ExternalTrainer::from_env(id)?)),
            _ => Err(BenchError::BackendUnavailable {
                id: id.into(),
                hint: "unknown trainer id".into(),
            }),
        }
    }
}
