use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::AnalyzeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub silhouette: f64,
    /// Mean Euclidean distance over all same-class pairs.
    pub mean_intra_class_distance: f64,
    /// Mean Euclidean distance over all pairs of class centroids.
    pub mean_inter_centroid_distance: f64,
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn groups(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        g.entry(l).or_default().push(i);
    }
    g
}

pub fn cluster_metrics(points: &Array2<f64>, labels: &[usize]) -> Result<ClusterReport, AnalyzeError> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(AnalyzeError::Validation(format!("{n} points but {} labels", labels.len())));
    }
    let groups = groups(labels);
    if groups.len() < 2 {
        return Err(AnalyzeError::Validation("need at least 2 classes".into()));
    }
    if let Some((c, _)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(AnalyzeError::Validation(format!("class {c} has a single point")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(AnalyzeError::Validation("non-finite coordinates".into()));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(points.row(i), points.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }

    let mut silhouette = 0.0;
    for i in 0..n {
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (&c, members) in &groups {
            let total: f64 = members.iter().map(|&j| d[i * n + j]).sum();
            if c == labels[i] {
                a = total / (members.len() - 1) as f64;
            } else {
                b = b.min(total / members.len() as f64);
            }
        }
        let m = a.max(b);
        silhouette += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    silhouette /= n as f64;

    let (mut intra, mut pairs) = (0.0, 0usize);
    for members in groups.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                intra += d[i * n + j];
                pairs += 1;
            }
        }
    }

    let centroids: Vec<Array1<f64>> = groups
        .values()
        .map(|m| {
            let mut c = Array1::zeros(points.ncols());
            for &i in m {
                c += &points.row(i);
            }
            c / m.len() as f64
        })
        .collect();
    let (mut inter, mut cpairs) = (0.0, 0usize);
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += dist(centroids[i].view(), centroids[j].view());
            cpairs += 1;
        }
    }

    Ok(ClusterReport {
        silhouette,
        mean_intra_class_distance: intra / pairs as f64,
        mean_inter_centroid_distance: inter / cpairs as f64,
    })
}
