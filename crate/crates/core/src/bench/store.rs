use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, ExperimentResult};

const CSV_HEADER: &str = "train,test,backbone,seed,n_test,top1";

#[derive(Serialize, Deserialize)]
struct IndexLine {
    digest: String,
    result: ExperimentResult,
}

/// Append-only results directory: `results.csv` with one row per
/// experiment and `index.jsonl` mapping spec digests to full results.
#[derive(Debug)]
pub struct ResultsStore {
    dir: PathBuf,
    order: Vec<String>,
    by_digest: HashMap<String, ExperimentResult>,
}

impl ResultsStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BenchError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
        let mut store = Self {
            dir,
            order: Vec::new(),
            by_digest: HashMap::new(),
        };
        let index = store.index_path();
        if index.exists() {
            let text = fs::read_to_string(&index).map_err(|e| store_err(&index, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let entry: IndexLine = serde_json::from_str(line).map_err(|e| BenchError::Store {
                    path: index.display().to_string(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                if store.by_digest.insert(entry.digest.clone(), entry.result).is_none() {
                    store.order.push(entry.digest);
                }
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn csv_path(&self) -> PathBuf {
        self.dir.join("results.csv")
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join("index.jsonl")
    }

    pub fn get(&self, digest: &str) -> Option<&ExperimentResult> {
        self.by_digest.get(digest)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Results in the order they were first stored.
    pub fn results(&self) -> Vec<ExperimentResult> {
        self.order.iter().map(|d| self.by_digest[d].clone()).collect()
    }

    /// Appends `result` unless its spec digest is already stored.
    pub fn put(&mut self, result: &ExperimentResult) -> Result<bool, BenchError> {
        let digest = result.spec.digest();
        if self.by_digest.contains_key(&digest) {
            return Ok(false);
        }
        let csv = self.csv_path();
        let fresh = !csv.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv)
            .map_err(|e| store_err(&csv, e))?;
        let s = &result.spec;
        let mut row = String::new();
        if fresh {
            row.push_str(CSV_HEADER);
            row.push('\n');
        }
        row.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.train, s.test, s.backbone, s.seed, result.n_test, result.top1
        ));
        f.write_all(row.as_bytes()).map_err(|e| store_err(&csv, e))?;

        let index = self.index_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| store_err(&index, e))?;
        let line = serde_json::to_string(&IndexLine {
            digest: digest.clone(),
            result: result.clone(),
        })
        .expect("result serializes");
        writeln!(f, "{line}").map_err(|e| store_err(&index, e))?;
        self.by_digest.insert(digest.clone(), result.clone());
        self.order.push(digest);
        Ok(true)
    }
}

fn store_err(path: &Path, e: std::io::Error) -> BenchError {
    BenchError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::ExperimentSpec;
    use super::*;

    #[test]
    fn put_is_idempotent_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let r = ExperimentResult {
            spec: ExperimentSpec::new("A", "A_FG", "toy-linear", 1),
            top1: 75.0,
            per_class: Default::default(),
            n_test: 4,
        };
        let mut s = ResultsStore::open(dir.path()).unwrap();
        assert!(s.put(&r).unwrap());
        assert!(!s.put(&r).unwrap());
        let s2 = ResultsStore::open(dir.path()).unwrap();
        assert_eq!(s2.results(), vec![r.clone()]);
        assert_eq!(s2.get(&r.spec.digest()), Some(&r));
        let csv = fs::read_to_string(s2.csv_path()).unwrap();
        assert_eq!(csv, "train,test,backbone,seed,n_test,top1\nA,A_FG,toy-linear,1,4,75\n");
    }
}
