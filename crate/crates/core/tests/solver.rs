mod common;

use disco::collectives::{CollectiveKind, Phase, Scheduler};
use disco::data::SparseDataset;
use disco::loss::LossModel;
use disco::solver::{solve, EpsPolicy, Mode, PrecondLayout, SolverConfig};
use disco::trace::write_trace;
use disco::Error;
use nalgebra::DVector;

fn cfg(loss: LossModel, lambda: f64, mode: Mode, nodes: usize, tau: usize) -> SolverConfig {
    SolverConfig {
        loss,
        lambda,
        tau,
        mode,
        nodes,
        record_steps: true,
        record_wall_time: false,
        ..Default::default()
    }
}

#[test]
fn one_node_sample_and_feature_modes_are_bitwise_equal() {
    let ds = common::logistic_instance(150, 20, 1);
    for loss in LossModel::ALL {
        let s = solve(&ds, &cfg(loss, 1e-3, Mode::Samples, 1, 40)).unwrap();
        let f = solve(&ds, &cfg(loss, 1e-3, Mode::Features, 1, 40)).unwrap();
        assert_eq!(s.w, f.w, "{loss}");
        assert_eq!(s.steps.len(), f.steps.len());
        for (a, b) in s.steps.iter().zip(&f.steps) {
            assert_eq!(a.v, b.v);
            assert_eq!(a.delta, b.delta);
        }
        let fv = |r: &disco::solver::SolveReport| r.trace.iter().map(|t| t.f_value).collect::<Vec<_>>();
        assert_eq!(fv(&s), fv(&f));
    }
}

#[test]
fn feature_mode_node_count_only_changes_summation_order() {
    let ds = common::logistic_instance(120, 15, 2);
    let one = solve(&ds, &cfg(LossModel::Logistic, 1e-3, Mode::Features, 1, 30)).unwrap();
    let three = solve(
        &ds,
        &SolverConfig {
            precond_layout: PrecondLayout::Full,
            ..cfg(LossModel::Logistic, 1e-3, Mode::Features, 3, 30)
        },
    )
    .unwrap();
    let blocks = solve(
        &ds,
        &SolverConfig {
            precond_layout: PrecondLayout::FeatureBlocks(3),
            ..cfg(LossModel::Logistic, 1e-3, Mode::Samples, 1, 30)
        },
    )
    .unwrap();
    assert_eq!(three.steps.len(), blocks.steps.len());
    let scale = three.steps[0].v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (a, b) in three.steps.iter().zip(&blocks.steps) {
        assert_eq!(a.inner_iters, b.inner_iters);
        assert!(common::rel_diff(&a.w, &b.w) <= 1e-12, "k={}", a.k);
        // steps shrink to rounding level near the optimum; compare on the first step's scale
        let diff = common::rel_diff(&a.v, &b.v) * b.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * scale, "k={}", a.k);
    }
    // the full-P single node differs only through the preconditioner
    assert!(common::rel_diff(&one.w, &three.w) <= 1e-8);
}

#[test]
fn sample_mode_node_count_does_not_change_the_iterates() {
    let ds = common::logistic_instance(200, 10, 3);
    let a = solve(&ds, &cfg(LossModel::Logistic, 1e-3, Mode::Samples, 1, 40)).unwrap();
    let b = solve(&ds, &cfg(LossModel::Logistic, 1e-3, Mode::Samples, 4, 40)).unwrap();
    assert_eq!(a.outer_iters(), b.outer_iters());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert!(common::rel_diff(&x.w, &y.w) <= 1e-12 || x.k == 0);
    }
}

#[test]
fn logistic_trace_decreases_and_matches_direct_solver() {
    let ds = common::logistic_instance(200, 50, 4);
    for mode in [Mode::Samples, Mode::Features] {
        let r = solve(&ds, &cfg(LossModel::Logistic, 1e-2, mode, 3, 50)).unwrap();
        assert!(r.converged);
        for (k, w) in common::iterates(&r).windows(2).enumerate() {
            let change = common::objective_change(&ds, LossModel::Logistic, 1e-2, &w[0], &w[1]);
            assert!(change < 0.0, "{mode} k={k}: {change:e}");
        }
        let oracle = common::newton_oracle(&ds, LossModel::Logistic, 1e-2);
        assert!(common::rel_diff(&r.w, &oracle) <= 1e-6);
    }
}

#[test]
fn damped_descent_for_every_loss() {
    let ds = common::logistic_instance(300, 25, 5);
    for loss in LossModel::ALL {
        for mode in [Mode::Samples, Mode::Features] {
            let r = solve(&ds, &cfg(loss, 1e-3, mode, 2, 60)).unwrap();
            assert!(r.converged, "{loss} {mode}");
            for (k, w) in common::iterates(&r).windows(2).enumerate() {
                let change = common::objective_change(&ds, loss, 1e-3, &w[0], &w[1]);
                assert!(change < 0.0, "{loss} {mode} k={k}: {change:e}");
            }
        }
    }
}

#[test]
fn each_newton_step_meets_the_inexactness_contract() {
    let ds = common::logistic_instance(200, 30, 6);
    for mode in [Mode::Samples, Mode::Features] {
        let r = solve(&ds, &cfg(LossModel::Logistic, 1e-3, mode, 3, 50)).unwrap();
        for step in &r.steps {
            let h = common::hessian(&ds, LossModel::Logistic, 1e-3, &step.w, None);
            let g = common::gradient(&ds, LossModel::Logistic, 1e-3, &step.w);
            let v = DVector::from_column_slice(&step.v);
            let res = (&h * &v - &g).norm();
            // the recurrence residual is below ε; allow for its drift
            assert!(res <= step.eps + 1e-10 * (1.0 + g.norm()), "{mode} k={} {res:e} > {:e}", step.k, step.eps);
            // δ² vs vᵀHv
            let vhv = v.dot(&(&h * &v));
            assert!((step.delta.powi(2) - vhv).abs() <= 2.0 * step.eps * v.norm() + 1e-12, "{mode} k={}", step.k);
        }
    }
}

#[test]
fn ledger_matches_per_iteration_costs() {
    let ds = common::logistic_instance(90, 12, 7);
    let (n, d) = (90u64, 12u64);

    let s = solve(&ds, &cfg(LossModel::Logistic, 1e-3, Mode::Samples, 3, 20)).unwrap();
    let t = s.inner_iters() as u64;
    let k = s.trace.len() as u64;
    let pcg = s.ledger.phase(Phase::PcgIteration);
    assert_eq!((pcg.rounds, pcg.vector_elements, pcg.scalars), (2 * t, 2 * d * t, 0));
    assert_eq!(pcg.grouped_rounds, 2 * t);
    let grad = s.ledger.phase(Phase::OuterGradient);
    assert_eq!((grad.rounds, grad.vector_elements), (2 * k, k * d + k * (d + 1)));
    assert_eq!(s.ledger.phase(Phase::Integration).rounds, 0);

    let f = solve(&ds, &cfg(LossModel::Logistic, 1e-3, Mode::Features, 3, 20)).unwrap();
    let t = f.inner_iters() as u64;
    let k = f.trace.len() as u64;
    let steps = k - 1;
    let pcg = f.ledger.phase(Phase::PcgIteration);
    assert_eq!((pcg.rounds, pcg.vector_elements, pcg.scalars), (3 * t, n * t, 2 * t));
    assert_eq!(pcg.grouped_rounds, t);
    let grad = f.ledger.phase(Phase::OuterGradient);
    assert_eq!((grad.rounds, grad.vector_elements, grad.scalars), (2 * k, n * k, 3 * k));
    let integ = f.ledger.phase(Phase::Integration);
    assert_eq!(f.ledger.get(Phase::Integration, CollectiveKind::Reduce).rounds, steps);
    assert_eq!((integ.rounds, integ.vector_elements, integ.scalars), (2 * steps, d * steps, steps));
}

#[test]
fn exact_newton_when_preconditioner_is_the_hessian() {
    // small labels keep the Newton decrement, and hence the damping, tiny
    let base = common::regression_instance(40, 6, 8);
    let labels: Vec<f64> = base.labels().iter().map(|y| 0.01 * y).collect();
    let ds = SparseDataset::new(base.matrix().clone(), labels).unwrap();
    let c = SolverConfig { mu: 0.0, ..cfg(LossModel::Quadratic, 0.1, Mode::Samples, 1, 40) };
    let r = solve(&ds, &c).unwrap();
    assert!(r.steps.iter().all(|s| s.inner_iters == 1));
    assert!(r.converged && r.outer_iters() <= 3, "{} outer", r.outer_iters());
    let h = common::hessian(&ds, LossModel::Quadratic, 0.1, &vec![0.0; 6], None);
    let g0 = common::gradient(&ds, LossModel::Quadratic, 0.1, &vec![0.0; 6]);
    let oracle = h.cholesky().unwrap().solve(&g0);
    let w_star: Vec<f64> = oracle.iter().map(|v| -v).collect();
    assert!(common::rel_diff(&r.w, &w_star) <= 1e-9);
}

#[test]
fn schedulers_agree() {
    let ds = common::logistic_instance(100, 10, 9);
    for mode in [Mode::Samples, Mode::Features] {
        let a = solve(&ds, &cfg(LossModel::Logistic, 1e-3, mode, 4, 10)).unwrap();
        let b = solve(&ds, &SolverConfig { scheduler: Scheduler::RoundRobin, ..cfg(LossModel::Logistic, 1e-3, mode, 4, 10) }).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn repeated_runs_write_identical_traces() {
    let ds = common::logistic_instance(100, 10, 10);
    let c = SolverConfig { hessian_fraction: 0.5, seed: 42, ..cfg(LossModel::Logistic, 1e-3, Mode::Features, 3, 10) };
    let csv = |r: &disco::solver::SolveReport| {
        let mut buf = Vec::new();
        write_trace(&r.trace, &mut buf).unwrap();
        buf
    };
    let a = csv(&solve(&ds, &c).unwrap());
    let b = csv(&solve(&ds, &c).unwrap());
    assert_eq!(a, b);
    let other = csv(&solve(&ds, &SolverConfig { seed: 43, ..c }).unwrap());
    assert_ne!(a, other);
}

#[test]
fn hessian_subsampling_reduces_feature_mode_traffic() {
    let ds = common::logistic_instance(200, 10, 11);
    let base = cfg(LossModel::Logistic, 1e-3, Mode::Features, 2, 20);
    let full = solve(&ds, &base).unwrap();
    let one = solve(&ds, &SolverConfig { hessian_fraction: 1.0, ..base.clone() }).unwrap();
    assert_eq!(full.trace, one.trace);

    let half = solve(&ds, &SolverConfig { hessian_fraction: 0.25, max_outer: 20, ..base }).unwrap();
    let t = half.inner_iters() as u64;
    assert_eq!(half.ledger.phase(Phase::PcgIteration).vector_elements, 50 * t);
}

#[test]
fn smaller_beta_never_needs_more_outer_iterations() {
    let ds = common::logistic_instance(300, 30, 12);
    let mut prev = usize::MAX;
    for beta in [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125] {
        let c = SolverConfig {
            eps: EpsPolicy::Relative { beta },
            grad_tol: 1e-8,
            ..cfg(LossModel::Logistic, 1e-3, Mode::Samples, 1, 30)
        };
        let k = solve(&ds, &c).unwrap().outer_iters();
        assert!(k <= prev, "beta {beta}: {k} > {prev}");
        prev = k;
    }
}

#[test]
fn non_finite_objective_is_reported_as_divergence() {
    let base = common::regression_instance(20, 4, 13);
    let ds = SparseDataset::new(base.matrix().clone(), vec![1e200; 20]).unwrap();
    for mode in [Mode::Samples, Mode::Features] {
        let r = solve(&ds, &cfg(LossModel::Quadratic, 1e-3, mode, 2, 5));
        assert!(matches!(r, Err(Error::Diverged { iteration: 0 })), "{mode}: {r:?}");
    }
}

#[test]
fn config_errors_name_the_field() {
    let ds = common::logistic_instance(20, 4, 14);
    let field = |c: SolverConfig| match solve(&ds, &c) {
        Err(Error::Config { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    assert_eq!(field(cfg(LossModel::Logistic, -1.0, Mode::Samples, 1, 5)), "lambda");
    assert_eq!(field(cfg(LossModel::Logistic, 1e-3, Mode::Features, 5, 5)), "nodes");
    assert_eq!(field(cfg(LossModel::Logistic, 1e-3, Mode::Samples, 2, 11)), "tau");
    assert_eq!(field(SolverConfig { max_inner: Some(0), ..cfg(LossModel::Logistic, 1e-3, Mode::Samples, 1, 5) }), "max-inner");
}

#[test]
fn inner_cap_surfaces_as_an_error() {
    let ds = common::logistic_instance(100, 20, 15);
    let c = SolverConfig {
        max_inner: Some(1),
        eps: EpsPolicy::Absolute { eps: 1e-14 },
        ..cfg(LossModel::Logistic, 1e-4, Mode::Features, 3, 5)
    };
    assert!(matches!(solve(&ds, &c), Err(Error::NonConvergence { .. })));
    let c = SolverConfig { mode: Mode::Samples, ..c };
    assert!(matches!(solve(&ds, &c), Err(Error::NonConvergence { .. })));
}
