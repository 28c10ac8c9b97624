use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnalyzeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_exaggeration")]
    pub early_exaggeration: f64,
    #[serde(default = "default_exaggeration_iters")]
    pub exaggeration_iterations: usize,
}

fn default_exaggeration() -> f64 {
    12.0
}

fn default_exaggeration_iters() -> usize {
    250
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            early_exaggeration: default_exaggeration(),
            exaggeration_iterations: default_exaggeration_iters(),
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<(), AnalyzeError> {
        if n < 2 {
            return Err(AnalyzeError::Config(format!("t-SNE needs at least 2 points, got {n}")));
        }
        if !(self.perplexity > 0.0) || 3.0 * self.perplexity >= (n - 1) as f64 {
            return Err(AnalyzeError::Config(format!(
                "perplexity {} infeasible for {n} points (need 0 < perplexity < (N-1)/3)",
                self.perplexity
            )));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) {
            return Err(AnalyzeError::Config("iterations and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    pub embedding: Array2<f64>,
    /// KL(P || Q) at the random initialization and after the last step,
    /// both against the un-exaggerated P.
    pub initial_kl: f64,
    pub final_kl: f64,
}

fn squared_distances(x: &Array2<f64>) -> Vec<f64> {
    let (n, d) = x.dim();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = x[[i, k]] - x[[j, k]];
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Row-conditional probabilities with a per-point precision found by
/// bisection so each row's entropy is ln(perplexity); then symmetrized and
/// normalized to sum 1.
fn joint_probabilities(d2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d2[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
        let mut probs = vec![0.0; n];
        for _ in 0..200 {
            // shift by the smallest off-diagonal distance for stability
            let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += probs[j];
                weighted += (row[j] - dmin) * probs[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for v in probs.iter_mut() {
                *v /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&probs);
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        joint[i * n + i] = 0.0;
    }
    joint
}

/// Student-t affinities: returns the unnormalized kernel and its sum.
fn affinities(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl(p: &[f64], num: &[f64], sum: f64, n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / sum).max(1e-12);
                total += pij * (pij / qij).ln();
            }
        }
    }
    total
}

/// Exact t-SNE to two dimensions. Gradient descent with momentum (0.5, then
/// 0.8 after the exaggeration phase) and per-parameter gains.
pub fn tsne_embed(x: &Array2<f64>, config: &TsneConfig) -> Result<TsneOutput, AnalyzeError> {
    let n = x.nrows();
    config.validate(n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalyzeError::Validation("non-finite input".into()));
    }
    let p = joint_probabilities(&squared_distances(x), n, config.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];

    let (num, sum) = affinities(&y, n);
    let initial_kl = kl(&p, &num, sum, n);

    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iterations;
        let scale = if exaggerate { config.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let (num, sum) = affinities(&y, n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = 4.0 * (scale * p[i * n + j] - w / sum) * w;
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
    }
    let (num, sum) = affinities(&y, n);
    let final_kl = kl(&p, &num, sum, n);
    Ok(TsneOutput {
        embedding: Array2::from_shape_vec((n, 2), y).expect("n x 2"),
        initial_kl,
        final_kl,
    })
}
