//! Dense reference implementations used as test oracles.
#![allow(dead_code)]

use disco::data::SparseDataset;
use disco::loss::LossModel;
use disco::synth::{self, Task};
use nalgebra::{DMatrix, DVector};

pub fn dense_x(ds: &SparseDataset) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(ds.d(), ds.n());
    for i in 0..ds.n() {
        let (rows, vals) = ds.matrix().col(i);
        for (&r, &v) in rows.iter().zip(vals) {
            x[(r, i)] = v;
        }
    }
    x
}

pub fn margins(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    x.transpose() * DVector::from_column_slice(w)
}

pub fn objective(ds: &SparseDataset, loss: LossModel, lambda: f64, w: &[f64]) -> f64 {
    let m = margins(&dense_x(ds), w);
    let sum: f64 = m.iter().zip(ds.labels()).map(|(&m, &y)| loss.value(m, y)).sum();
    sum / ds.n() as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

pub fn gradient(ds: &SparseDataset, loss: LossModel, lambda: f64, w: &[f64]) -> DVector<f64> {
    let x = dense_x(ds);
    let m = margins(&x, w);
    let dphi = DVector::from_iterator(
        ds.n(),
        m.iter().zip(ds.labels()).map(|(&m, &y)| loss.derivative(m, y)),
    );
    &x * dphi / ds.n() as f64 + DVector::from_column_slice(w) * lambda
}

/// `(1/|S|) X_S diag(φ″) X_Sᵀ + λI`
pub fn hessian(
    ds: &SparseDataset,
    loss: LossModel,
    lambda: f64,
    w: &[f64],
    subset: Option<&[usize]>,
) -> DMatrix<f64> {
    let x = dense_x(ds);
    let m = margins(&x, w);
    let all: Vec<usize> = (0..ds.n()).collect();
    let idx = subset.unwrap_or(&all);
    let mut h = DMatrix::identity(ds.d(), ds.d()) * lambda;
    for &i in idx {
        let c = loss.second_derivative(m[i], ds.labels()[i]) / idx.len() as f64;
        let xi = x.column(i);
        h += xi * xi.transpose() * c;
    }
    h
}

/// Newton's method with exact dense solves and backtracking, run to
/// machine precision.
pub fn newton_oracle(ds: &SparseDataset, loss: LossModel, lambda: f64) -> Vec<f64> {
    let mut w = vec![0.0; ds.d()];
    for _ in 0..100 {
        let g = gradient(ds, loss, lambda, &w);
        if g.norm() < 1e-14 {
            break;
        }
        let h = hessian(ds, loss, lambda, &w, None);
        let step = h.cholesky().expect("SPD Hessian").solve(&g);
        let f0 = objective(ds, loss, lambda, &w);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
            if objective(ds, loss, lambda, &trial) <= f0 || t < 1e-12 {
                w = trial;
                break;
            }
            t *= 0.5;
        }
    }
    w
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn logistic_instance(n: usize, d: usize, seed: u64) -> SparseDataset {
    synth::dense_gaussian(n, d, Task::Classification, 0.5, seed).unwrap()
}

pub fn regression_instance(n: usize, d: usize, seed: u64) -> SparseDataset {
    synth::dense_gaussian(n, d, Task::Regression, 0.1, seed).unwrap()
}

/// `f(w_new) − f(w_old)` evaluated in difference form, so that decreases far
/// below the rounding error of `f` itself are still resolved.
pub fn objective_change(
    ds: &SparseDataset,
    loss: LossModel,
    lambda: f64,
    w_old: &[f64],
    w_new: &[f64],
) -> f64 {
    let step: Vec<f64> = w_new.iter().zip(w_old).map(|(a, b)| a - b).collect();
    let x = ds.matrix();
    let mut change = 0.0;
    for i in 0..ds.n() {
        let y = ds.labels()[i];
        let m = x.col_dot(i, w_old);
        let dm = x.col_dot(i, &step);
        change += match loss {
            // (y − m − Δ)² − (y − m)² = −Δ(2(y − m) − Δ)
            LossModel::Quadratic => -dm * (2.0 * (y - m) - dm),
            LossModel::SquaredHinge => {
                let (a, b) = ((y - m).max(0.0), (y - m - dm).max(0.0));
                (b - a) * (b + a)
            }
            // log(1 + e^{b}) − log(1 + e^{a}) = log1p(σ(a)·expm1(b − a)), a = −ym
            LossModel::Logistic => {
                let a = -y * m;
                let sig = if a >= 0.0 { 1.0 / (1.0 + (-a).exp()) } else { a.exp() / (1.0 + a.exp()) };
                (sig * (-y * dm).exp_m1()).ln_1p()
            }
        };
    }
    let reg: f64 = step.iter().zip(w_new.iter().zip(w_old)).map(|(s, (a, b))| s * (a + b)).sum();
    change / ds.n() as f64 + 0.5 * lambda * reg
}

/// Outer iterates `w_0, …, w_K` from a report recorded with steps.
pub fn iterates(report: &disco::solver::SolveReport) -> Vec<Vec<f64>> {
    let mut ws: Vec<Vec<f64>> = report.steps.iter().map(|s| s.w.clone()).collect();
    ws.push(report.w.clone());
    ws
}
