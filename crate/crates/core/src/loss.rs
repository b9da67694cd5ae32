//! Per-sample losses and the regularized empirical objective
//!
//! `f(w) = (1/n) Σ φ(w·xᵢ, yᵢ) + (λ/2)‖w‖²`
//!
//! All kernels take the raw margin `w·x` and the label separately.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SparseDataset;
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossModel {
    /// `(y − m)²`
    Quadratic,
    /// `(max{0, y − m})²`
    SquaredHinge,
    /// `log(1 + exp(−y·m))`
    Logistic,
}

impl LossModel {
    pub const ALL: [LossModel; 3] = [
        LossModel::Quadratic,
        LossModel::SquaredHinge,
        LossModel::Logistic,
    ];

    /// Self-concordance parameter `M`.
    pub fn self_concordance(self) -> f64 {
        match self {
            LossModel::Quadratic | LossModel::SquaredHinge => 0.0,
            LossModel::Logistic => 1.0,
        }
    }

    pub fn value(self, margin: f64, label: f64) -> f64 {
        match self {
            LossModel::Quadratic => (label - margin).powi(2),
            LossModel::SquaredHinge => (label - margin).max(0.0).powi(2),
            LossModel::Logistic => log1p_exp(-label * margin),
        }
    }

    /// `∂φ/∂m`.
    pub fn derivative(self, margin: f64, label: f64) -> f64 {
        match self {
            LossModel::Quadratic => -2.0 * (label - margin),
            LossModel::SquaredHinge => -2.0 * (label - margin).max(0.0),
            LossModel::Logistic => -label * sigmoid(-label * margin),
        }
    }

    /// `∂²φ/∂m²`. Never negative; the squared hinge kink counts as inactive.
    pub fn second_derivative(self, margin: f64, label: f64) -> f64 {
        match self {
            LossModel::Quadratic => 2.0,
            LossModel::SquaredHinge => {
                if label - margin > 0.0 {
                    2.0
                } else {
                    0.0
                }
            }
            LossModel::Logistic => label * label * logistic_curvature(label * margin),
        }
    }
}

impl fmt::Display for LossModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossModel::Quadratic => "quadratic",
            LossModel::SquaredHinge => "squared-hinge",
            LossModel::Logistic => "logistic",
        })
    }
}

impl FromStr for LossModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(LossModel::Quadratic),
            "squared-hinge" => Ok(LossModel::SquaredHinge),
            "logistic" => Ok(LossModel::Logistic),
            other => Err(Error::config("loss", format!("unknown loss {other:?}"))),
        }
    }
}

/// `1 / (1 + e^{−z})` without overflowing for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{z})`.
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `e^{−z} / (1 + e^{−z})² = σ(z)·σ(−z)`, symmetric in `z`.
pub fn logistic_curvature(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// The regularized empirical risk over a whole (unpartitioned) dataset.
///
/// These serial routines are the reference the distributed solvers are
/// checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: LossModel,
    pub lambda: f64,
    pub n: usize,
    pub d: usize,
}

impl Objective {
    pub fn new(loss: LossModel, lambda: f64, n: usize, d: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be positive, got {lambda}")));
        }
        if n == 0 {
            return Err(Error::config("n", "need at least one sample"));
        }
        if d == 0 {
            return Err(Error::config("d", "need at least one feature"));
        }
        Ok(Objective { loss, lambda, n, d })
    }

    pub fn for_dataset(loss: LossModel, lambda: f64, data: &SparseDataset) -> Result<Self> {
        Objective::new(loss, lambda, data.n(), data.d())
    }

    fn check(&self, data: &SparseDataset, w: &[f64]) -> Result<()> {
        Error::check_len("samples", self.n, data.n())?;
        Error::check_len("features", self.d, data.d())?;
        Error::check_len("weight vector", self.d, w.len())
    }

    pub fn value(&self, data: &SparseDataset, w: &[f64]) -> Result<f64> {
        self.check(data, w)?;
        let x = data.matrix();
        let loss: f64 = (0..self.n)
            .map(|i| self.loss.value(x.col_dot(i, w), data.labels()[i]))
            .sum();
        Ok(loss / self.n as f64 + 0.5 * self.lambda * dot(w, w))
    }

    pub fn full_gradient(&self, data: &SparseDataset, w: &[f64]) -> Result<Vec<f64>> {
        self.check(data, w)?;
        let x = data.matrix();
        let mut g = vec![0.0; self.d];
        for i in 0..self.n {
            let c = self.loss.derivative(x.col_dot(i, w), data.labels()[i]);
            x.col_axpy(i, c, &mut g);
        }
        let n = self.n as f64;
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj = *gj / n + self.lambda * wj;
        }
        Ok(g)
    }

    /// `(1/|S|) Σ_{i∈S} φ″ᵢ(w·xᵢ)(xᵢ·u)xᵢ + λu`, with `S` all samples when
    /// `subset` is `None`.
    pub fn hessian_vec(
        &self,
        data: &SparseDataset,
        w: &[f64],
        u: &[f64],
        subset: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        self.check(data, w)?;
        Error::check_len("direction", self.d, u.len())?;
        let x = data.matrix();
        let mut hu = vec![0.0; self.d];
        let mut accumulate = |i: usize| {
            let c = self.loss.second_derivative(x.col_dot(i, w), data.labels()[i]);
            x.col_axpy(i, c * x.col_dot(i, u), &mut hu);
        };
        let count = match subset {
            None => {
                (0..self.n).for_each(&mut accumulate);
                self.n
            }
            Some([]) => return Err(Error::EmptySubset),
            Some(s) => {
                for &i in s {
                    if i >= self.n {
                        return Err(Error::DimensionMismatch {
                            what: "subset index",
                            expected: self.n,
                            found: i,
                        });
                    }
                    accumulate(i);
                }
                s.len()
            }
        };
        let count = count as f64;
        for (h, uj) in hu.iter_mut().zip(u) {
            *h = *h / count + self.lambda * uj;
        }
        Ok(hu)
    }
}
