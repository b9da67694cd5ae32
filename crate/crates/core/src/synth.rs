//! Seeded synthetic datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::data::SparseDataset;
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// `y = x·w* + noise`
    Regression,
    /// `y = sign(x·w* + noise)` in `{−1, +1}`
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::config("task", format!("unknown task {other:?}"))),
        }
    }
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("samples", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::config("features", "must be at least 1"));
    }
    Ok(())
}

fn label(task: Task, score: f64) -> f64 {
    match task {
        Task::Regression => score,
        Task::Classification if score >= 0.0 => 1.0,
        Task::Classification => -1.0,
    }
}

/// Dense `N(0, 1/d)` features with a planted `N(0, 1)` model.
pub fn dense_gaussian(n: usize, d: usize, task: Task, noise: f64, seed: u64) -> Result<SparseDataset> {
    check_dims(n, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
    let std = Normal::new(0.0, 1.0).expect("valid std");
    let w_star: Vec<f64> = (0..d).map(|_| std.sample(&mut rng)).collect();
    let mut x = CscMatrix::empty(d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let col: Vec<f64> = (0..d).map(|_| feature.sample(&mut rng)).collect();
        let score: f64 = col.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>()
            + noise * std.sample(&mut rng);
        labels.push(label(task, score));
        x.push_column(col.into_iter().enumerate());
    }
    SparseDataset::new(x, labels)
}

/// Bag-of-words style data: `nnz` distinct Zipf-distributed feature indices
/// per sample with log-normal weights, each sample scaled to unit norm.
pub fn sparse_text(
    n: usize,
    d: usize,
    nnz: usize,
    task: Task,
    noise: f64,
    seed: u64,
) -> Result<SparseDataset> {
    check_dims(n, d)?;
    if nnz == 0 || nnz > d {
        return Err(Error::config("nnz", format!("must lie in [1, {d}], got {nnz}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(d as f64, 1.1).expect("valid zipf");
    let weight = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let std = Normal::new(0.0, 1.0).expect("valid std");
    let w_star: Vec<f64> = (0..d).map(|_| std.sample(&mut rng)).collect();

    let mut x = CscMatrix::empty(d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut entries = BTreeMap::new();
        let mut draws = 0;
        while entries.len() < nnz {
            // popular words first; fall back to uniform if the head is exhausted
            let idx = if draws < 20 * nnz {
                zipf.sample(&mut rng) as usize - 1
            } else {
                rng.random_range(0..d)
            };
            draws += 1;
            entries.entry(idx).or_insert_with(|| weight.sample(&mut rng));
        }
        let scale = entries.values().map(|v| v * v).sum::<f64>().sqrt().recip();
        let score: f64 = entries.iter().map(|(&i, v)| v * scale * w_star[i]).sum::<f64>()
            + noise * std.sample(&mut rng);
        labels.push(label(task, score));
        x.push_column(entries.into_iter().map(|(i, v)| (i, v * scale)));
    }
    SparseDataset::new(x, labels)
}
