use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::sparse::CscMatrix;

/// The part of `H·u = (1/|S|) Σ_{i∈S} φ″ᵢ (xᵢ·u) xᵢ + λu` that one node can
/// form from the columns it holds.
///
/// In sample mode the columns are the node's samples; in feature mode they
/// are every sample restricted to the node's feature rows, and the
/// projections `xᵢ·u` must be summed across nodes before [`accumulate`].
///
/// [`accumulate`]: LocalHessian::accumulate
#[derive(Debug, Clone)]
pub struct LocalHessian<'a> {
    x: &'a CscMatrix,
    /// Active columns; `None` means all of them.
    cols: Option<Vec<usize>>,
    /// `φ″ᵢ` for each active column, in order.
    coef: Vec<f64>,
    denom: f64,
    lambda: f64,
}

impl<'a> LocalHessian<'a> {
    /// `margins` and `labels` are indexed by column of `x`. `denom` is the
    /// global size of the sample set.
    pub fn new(
        x: &'a CscMatrix,
        loss: LossModel,
        margins: &[f64],
        labels: &[f64],
        lambda: f64,
        cols: Option<Vec<usize>>,
        denom: usize,
    ) -> Result<Self> {
        Error::check_len("margins", x.ncols(), margins.len())?;
        Error::check_len("labels", x.ncols(), labels.len())?;
        if denom == 0 {
            return Err(Error::EmptySubset);
        }
        let coef = match &cols {
            None => (0..x.ncols())
                .map(|i| loss.second_derivative(margins[i], labels[i]))
                .collect(),
            Some(c) => {
                if let Some(&bad) = c.iter().find(|&&i| i >= x.ncols()) {
                    return Err(Error::DimensionMismatch {
                        what: "subset index",
                        expected: x.ncols(),
                        found: bad,
                    });
                }
                c.iter()
                    .map(|&i| loss.second_derivative(margins[i], labels[i]))
                    .collect()
            }
        };
        Ok(LocalHessian {
            x,
            cols,
            coef,
            denom: denom as f64,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// Number of active columns, i.e. the length of [`projections`].
    ///
    /// [`projections`]: LocalHessian::projections
    pub fn active(&self) -> usize {
        self.coef.len()
    }

    fn column(&self, k: usize) -> usize {
        match &self.cols {
            None => k,
            Some(c) => c[k],
        }
    }

    /// `xᵢ·u` for each active column.
    pub fn projections(&self, u: &[f64]) -> Vec<f64> {
        (0..self.active())
            .map(|k| self.x.col_dot(self.column(k), u))
            .collect()
    }

    /// `Σ φ″ᵢ zᵢ xᵢ` over the active columns.
    pub fn accumulate(&self, z: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for (k, (&c, &zk)) in self.coef.iter().zip(z).enumerate() {
            self.x.col_axpy(self.column(k), c * zk, &mut acc);
        }
        acc
    }

    pub fn local_part(&self, u: &[f64]) -> Vec<f64> {
        self.accumulate(&self.projections(u))
    }

    /// `acc/|S| + λu` once `acc` holds the global sum.
    pub fn finish(&self, mut acc: Vec<f64>, u: &[f64]) -> Vec<f64> {
        for (a, ui) in acc.iter_mut().zip(u) {
            *a = *a / self.denom + self.lambda * ui;
        }
        acc
    }
}
