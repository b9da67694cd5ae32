//! Subsampled-Hessian preconditioner and its exact Woodbury solve.
//!
//! `P = (λ + μ)·I + (1/τ) Σᵢ φ″ᵢ·xᵢxᵢᵀ` over `τ` designated samples. The
//! curvature and averaging factors are folded into the stored columns,
//! `x̃ᵢ = sqrt(φ″ᵢ/τ)·xᵢ`, so that `P = shift·I + X̃X̃ᵀ` and `Ps = r` is solved
//! with one `τ × τ` Cholesky factor:
//!
//! ```text
//! y = r / shift
//! (I + X̃ᵀX̃ / shift) v = X̃ᵀy
//! s = y − X̃v / shift
//! ```

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::{Partition, PartitionMode};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::sparse::CscMatrix;

/// Anything that can apply `P⁻¹`.
pub trait Preconditioner: Send + Sync {
    fn dim(&self) -> usize;
    fn solve(&self, r: &[f64]) -> Result<Vec<f64>>;
}

/// `P = I`; turns PCG into plain CG.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Preconditioner for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("residual", self.0, r.len())?;
        Ok(r.to_vec())
    }
}

/// Per-sample curvature `φ″(w·xᵢ, yᵢ)` for the designated samples.
pub fn curvatures(loss: LossModel, margins: &[f64], labels: &[f64]) -> Vec<f64> {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| loss.second_derivative(m, y))
        .collect()
}

#[derive(Debug, Clone)]
pub struct WoodburyPrecond {
    shift: f64,
    mu: f64,
    columns: CscMatrix,
    gram: Cholesky<f64, Dyn>,
}

impl WoodburyPrecond {
    /// Builds `P` from the first `curvature.len()` columns of `samples`.
    pub fn build(samples: &CscMatrix, curvature: &[f64], lambda: f64, mu: f64) -> Result<Self> {
        let tau = curvature.len();
        if tau == 0 {
            return Err(Error::config("tau", "must be at least 1"));
        }
        if tau > samples.ncols() {
            return Err(Error::config(
                "tau",
                format!("{tau} exceeds the {} samples available", samples.ncols()),
            ));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::config("mu", format!("must be nonnegative, got {mu}")));
        }
        let shift = lambda + mu;
        if !(shift > 0.0 && shift.is_finite()) {
            return Err(Error::config("lambda", "lambda + mu must be positive"));
        }

        let mut columns = CscMatrix::empty(samples.nrows());
        for (i, &c) in curvature.iter().enumerate() {
            let scale = (c / tau as f64).sqrt();
            let (rows, vals) = samples.col(i);
            columns.push_column(rows.iter().zip(vals).map(|(&r, &v)| (r, scale * v)));
        }

        let mut g = DMatrix::<f64>::identity(tau, tau);
        for a in 0..tau {
            for b in 0..=a {
                let v = columns.col_col_dot(a, &columns, b) / shift;
                g[(a, b)] += v;
                if a != b {
                    g[(b, a)] += v;
                }
            }
        }
        let gram = g.cholesky().ok_or(Error::SingularGram { order: tau })?;
        Ok(WoodburyPrecond {
            shift,
            mu,
            columns,
            gram,
        })
    }

    pub fn for_loss(
        samples: &CscMatrix,
        margins: &[f64],
        labels: &[f64],
        loss: LossModel,
        lambda: f64,
        mu: f64,
    ) -> Result<Self> {
        Error::check_len("labels", margins.len(), labels.len())?;
        WoodburyPrecond::build(samples, &curvatures(loss, margins, labels), lambda, mu)
    }

    pub fn tau(&self) -> usize {
        self.columns.ncols()
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Scaled columns `x̃ᵢ`.
    pub fn columns(&self) -> &CscMatrix {
        &self.columns
    }

    /// `P·s = shift·s + X̃(X̃ᵀs)`.
    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("vector", self.dim(), s.len())?;
        let coef = self.columns.transpose_mul(s);
        let mut out = self.columns.mul(&coef);
        for (o, si) in out.iter_mut().zip(s) {
            *o += self.shift * si;
        }
        Ok(out)
    }

    /// Explicitly assembled `P`. Quadratic in the dimension.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut p = DMatrix::<f64>::identity(d, d) * self.shift;
        for i in 0..self.tau() {
            let (rows, vals) = self.columns.col(i);
            for (&ra, &va) in rows.iter().zip(vals) {
                for (&rb, &vb) in rows.iter().zip(vals) {
                    p[(ra, rb)] += va * vb;
                }
            }
        }
        p
    }
}

impl Preconditioner for WoodburyPrecond {
    fn dim(&self) -> usize {
        self.columns.nrows()
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("residual", self.dim(), r.len())?;
        let y: Vec<f64> = r.iter().map(|v| v / self.shift).collect();
        let rhs = DVector::from_vec(self.columns.transpose_mul(&y));
        let v = self.gram.solve(&rhs);
        let xv = self.columns.mul(v.as_slice());
        Ok(y.iter().zip(&xv).map(|(a, b)| a - b / self.shift).collect())
    }
}

/// Diagonal block `j` of `P` for a feature partition: the same `τ` samples
/// and curvatures restricted to the rows `partition.block(j)`.
pub fn block_preconditioner(
    samples: &CscMatrix,
    curvature: &[f64],
    lambda: f64,
    mu: f64,
    partition: &Partition,
    j: usize,
) -> Result<WoodburyPrecond> {
    if partition.mode != PartitionMode::ByFeatures {
        return Err(Error::config("partition", "block preconditioner needs a feature partition"));
    }
    let tau = curvature.len().min(samples.ncols());
    let local = samples.select_cols(0..tau).select_rows(partition.block(j));
    WoodburyPrecond::build(&local, curvature, lambda, mu)
}

/// `blockdiag(P⁽¹⁾, …, P⁽ᵐ⁾)` over contiguous feature blocks.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<(Range<usize>, WoodburyPrecond)>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn build(
        samples: &CscMatrix,
        curvature: &[f64],
        lambda: f64,
        mu: f64,
        partition: &Partition,
    ) -> Result<Self> {
        let blocks = (0..partition.blocks())
            .map(|j| {
                block_preconditioner(samples, curvature, lambda, mu, partition, j)
                    .map(|p| (partition.block(j), p))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiagonal {
            blocks,
            dim: samples.nrows(),
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &(Range<usize>, WoodburyPrecond)> {
        self.blocks.iter()
    }
}

impl Preconditioner for BlockDiagonal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("residual", self.dim, r.len())?;
        let mut out = Vec::with_capacity(self.dim);
        for (range, p) in &self.blocks {
            out.extend(p.solve(&r[range.clone()])?);
        }
        Ok(out)
    }
}
