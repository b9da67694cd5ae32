mod common;

use approx::assert_relative_eq;
use disco::data::{Partition, PartitionMode};
use disco::loss::LossModel;
use disco::precond::{block_preconditioner, curvatures, BlockDiagonal, Preconditioner, WoodburyPrecond};
use disco::sparse::CscMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_columns(rng: &mut ChaCha8Rng, d: usize, n: usize, density: f64) -> CscMatrix {
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| if rng.random_bool(density) { rng.random_range(-1.0..1.0) } else { 0.0 })
                .collect()
        })
        .collect();
    CscMatrix::from_dense_columns(d, &cols)
}

/// `(λ+μ)I + (1/τ) Σ φ″ᵢ xᵢxᵢᵀ` assembled from the raw columns.
fn assemble(x: &CscMatrix, curv: &[f64], lambda: f64, mu: f64) -> DMatrix<f64> {
    let d = x.nrows();
    let mut p = DMatrix::identity(d, d) * (lambda + mu);
    for (i, &c) in curv.iter().enumerate() {
        let mut xi = DVector::zeros(d);
        let (rows, vals) = x.col(i);
        for (&r, &v) in rows.iter().zip(vals) {
            xi[r] = v;
        }
        p += &xi * xi.transpose() * (c / curv.len() as f64);
    }
    p
}

#[test]
fn matches_dense_cholesky_at_d200_tau50() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, tau) = (200, 50);
    let x = random_columns(&mut rng, d, tau, 0.3);
    let margins: Vec<f64> = (0..tau).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<f64> = (0..tau).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let curv = curvatures(LossModel::Logistic, &margins, &labels);
    let p = WoodburyPrecond::build(&x, &curv, 1e-3, 1e-2).unwrap();
    let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = p.solve(&r).unwrap();
    let dense = assemble(&x, &curv, 1e-3, 1e-2);
    let oracle = dense.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&r));
    assert!(common::rel_diff(&s, oracle.as_slice()) <= 1e-10);
    assert_relative_eq!(p.dense(), dense, max_relative = 1e-12, epsilon = 1e-15);
}

#[test]
fn block_is_the_diagonal_block_of_the_global_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, tau, m) = (17, 6, 4);
    let x = random_columns(&mut rng, d, tau + 3, 0.5);
    let curv: Vec<f64> = (0..tau).map(|_| rng.random_range(0.0..2.0)).collect();
    let global = assemble(&x.select_cols(0..tau), &curv, 0.1, 0.01);
    let part = Partition::balanced(PartitionMode::ByFeatures, d, m).unwrap();
    for j in 0..m {
        let b = part.block(j);
        let block = block_preconditioner(&x, &curv, 0.1, 0.01, &part, j).unwrap();
        let expect = global.view((b.start, b.start), (b.len(), b.len()));
        assert_relative_eq!(block.dense(), expect.clone_owned(), max_relative = 1e-14, epsilon = 1e-15);
    }
}

#[test]
fn block_diagonal_solve_matches_dense_oracle() {
    // d = 6, m = 3, τ = 4: three 2×2 blocks
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_columns(&mut rng, 6, 4, 1.0);
    let curv = [2.0; 4];
    let part = Partition::balanced(PartitionMode::ByFeatures, 6, 3).unwrap();
    let bd = BlockDiagonal::build(&x, &curv, 0.5, 0.0, &part).unwrap();
    assert_eq!(bd.blocks().count(), 3);
    assert!(bd.blocks().all(|(r, p)| r.len() == 2 && p.dim() == 2));

    let full = assemble(&x, &curv, 0.5, 0.0);
    let mut oracle = DMatrix::zeros(6, 6);
    for j in 0..3 {
        let b = part.block(j);
        oracle
            .view_mut((b.start, b.start), (2, 2))
            .copy_from(&full.view((b.start, b.start), (2, 2)));
    }
    let r = [1.0, -2.0, 0.5, 3.0, -1.5, 0.25];
    let s = bd.solve(&r).unwrap();
    let expect = oracle.cholesky().unwrap().solve(&DVector::from_column_slice(&r));
    for (a, b) in s.iter().zip(expect.iter()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn exact_hessian_when_tau_is_n_and_mu_zero() {
    let ds = common::regression_instance(30, 8, 4);
    let w = vec![0.0; 8];
    let p = WoodburyPrecond::for_loss(ds.matrix(), &[0.0; 30], ds.labels(), LossModel::Quadratic, 0.1, 0.0).unwrap();
    let h = common::hessian(&ds, LossModel::Quadratic, 0.1, &w, None);
    assert_relative_eq!(p.dense(), h, max_relative = 1e-12, epsilon = 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_and_linearity(
        seed in any::<u64>(),
        d in 1usize..40,
        tau in 1usize..12,
        loss_idx in 0usize..3,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_columns(&mut rng, d, tau, 0.4);
        let margins: Vec<f64> = (0..tau).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<f64> = (0..tau).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let p = WoodburyPrecond::for_loss(&x, &margins, &labels, LossModel::ALL[loss_idx], 1e-3, 1e-2).unwrap();
        let r1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

        let s1 = p.solve(&r1).unwrap();
        let back = p.apply(&s1).unwrap();
        let rn: f64 = r1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = back.iter().zip(&r1).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * rn.max(1e-300));

        let s2 = p.solve(&r2).unwrap();
        let combo: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let sc = p.solve(&combo).unwrap();
        let scale = s1.iter().chain(&s2).fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            prop_assert!((sc[i] - (a * s1[i] + b * s2[i])).abs() <= 1e-12 * scale * (1.0 + a.abs() + b.abs()));
        }
    }
}
