//! Feature-partitioned solver. Node `j` owns rows `j` of every vector; only
//! sample-length projections and a handful of scalars cross the network.

use crate::collectives::{NodeCtx, Payload, Phase, TrafficLedger};
use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, xpby};
use crate::loss::LossModel;
use crate::precond::{curvatures, Preconditioner, WoodburyPrecond};

use super::{
    damped_update, eps_policy, hessian_subset, LocalHessian, NewtonStep, NodeOutput, OuterStep,
    PcgIterate, RunCtx, SolveReport,
};

/// PCG on the local slices, with global inner products formed by scalar
/// reduce-alls. `s0 = P_j⁻¹ grad_j` and `rs0 = ⟨grad, s0⟩`, `grad_norm` are
/// the values already reduced in the gradient phase.
///
/// Per iteration: one reduce-all of the active projections (vector), one of
/// `⟨u, Hu⟩` and one of `⟨r, s⟩`, the latter carrying `‖r_j‖²` as a control
/// word for the stopping test. The returned step holds the local slice of `v`
/// and the global `δ`, which costs one more scalar reduce-all.
#[allow(clippy::too_many_arguments)]
pub async fn pcg_disco_f(
    ctx: &mut NodeCtx,
    hess: &LocalHessian<'_>,
    precond: &dyn Preconditioner,
    grad: &[f64],
    s0: Vec<f64>,
    rs0: f64,
    grad_norm: f64,
    eps: f64,
    max_iters: usize,
    record: bool,
) -> Result<NewtonStep> {
    let dj = grad.len();
    Error::check_len("gradient", hess.dim(), dj)?;
    Error::check_len("preconditioner", dj, precond.dim())?;
    Error::check_len("preconditioned gradient", dj, s0.len())?;
    let before = ctx.ledger().phase(Phase::PcgIteration);

    if grad_norm <= eps {
        let mut step = NewtonStep::zero(dj);
        step.residual_norm = grad_norm;
        return Ok(step);
    }
    let mut r = grad.to_vec();
    let mut u = s0;
    let mut rs = rs0;
    let mut v = vec![0.0; dj];
    let mut hv = vec![0.0; dj];
    let mut history = Vec::new();
    let mut t = 0;
    loop {
        let z = ctx
            .reduce_all(Phase::PcgIteration, Payload::vector(hess.projections(&u)))
            .await?;
        let hu = hess.finish(hess.accumulate(&z.data), &u);
        let uhu = ctx
            .reduce_all(Phase::PcgIteration, Payload::scalars(vec![dot(&u, &hu)]))
            .await?
            .data[0];
        if !(uhu > 0.0) {
            return Err(Error::NotPositiveDefinite {
                iteration: t,
                value: uhu,
            });
        }
        let alpha = rs / uhu;
        axpy(alpha, &u, &mut v);
        let hv_prev = hv.clone();
        axpy(alpha, &hu, &mut hv);
        axpy(-alpha, &hu, &mut r);
        t += 1;
        if record {
            history.push(PcgIterate {
                t,
                v: v.clone(),
                r: r.clone(),
            });
        }

        let s = precond.solve(&r)?;
        let red = ctx
            .reduce_all(
                Phase::PcgIteration,
                Payload::scalars(vec![dot(&r, &s)]).with_control(vec![dot(&r, &r)]),
            )
            .await?;
        let rnorm = red.control[0].sqrt();
        if rnorm <= eps {
            let comm = ctx.ledger().phase(Phase::PcgIteration).since(&before);
            let delta_sq = dot(&v, &hv_prev) + alpha * dot(&v, &hu);
            let delta_sq = ctx
                .reduce_all(Phase::Integration, Payload::scalars(vec![delta_sq]))
                .await?
                .data[0];
            return Ok(NewtonStep {
                v,
                delta: delta_sq.max(0.0).sqrt(),
                inner_iters: t,
                comm_rounds: comm.rounds,
                residual_norm: rnorm,
                history,
            });
        }
        if t >= max_iters {
            return Err(Error::NonConvergence {
                iterations: t,
                residual: rnorm,
                eps,
            });
        }
        let rs_new = red.data[0];
        let beta = rs_new / rs;
        rs = rs_new;
        xpby(&s, beta, &mut u);
    }
}

pub(super) async fn run_node(
    mut ctx: NodeCtx,
    shard: &DatasetShard,
    run: &RunCtx<'_>,
) -> Result<NodeOutput> {
    let cfg = run.cfg;
    let (n, d) = (shard.n_total, shard.d_total);
    let x = &shard.matrix;
    let dj = x.nrows();
    let nf = n as f64;
    let max_inner = cfg.max_inner_for(d);

    let mut out = NodeOutput::default();
    let mut w = vec![0.0; dj];
    let mut w_full = (ctx.id() == 0).then(|| vec![0.0; d]);
    let mut cached: Option<WoodburyPrecond> = None;
    let mut inner_total = 0;

    for k in 0..=cfg.max_outer {
        let z: Vec<f64> = (0..n).map(|i| x.col_dot(i, &w)).collect();
        let margins = ctx
            .reduce_all(Phase::OuterGradient, Payload::vector(z))
            .await?
            .data;
        let mut grad = vec![0.0; dj];
        let mut loss_sum = 0.0;
        for (i, (&m, &y)) in margins.iter().zip(&shard.labels).enumerate() {
            x.col_axpy(i, cfg.loss.derivative(m, y), &mut grad);
            loss_sum += cfg.loss.value(m, y);
        }
        for (g, wi) in grad.iter_mut().zip(&w) {
            *g = *g / nf + cfg.lambda * wi;
        }

        let precond = match cached.take() {
            Some(p) => p,
            None => {
                let curv = curvatures(cfg.loss, &margins[..cfg.tau], &shard.labels[..cfg.tau]);
                WoodburyPrecond::build(x, &curv, cfg.lambda, cfg.mu)?
            }
        };
        let s0 = precond.solve(&grad)?;
        let sc = ctx
            .reduce_all(
                Phase::OuterGradient,
                Payload::scalars(vec![dot(&grad, &grad), dot(&w, &w), dot(&grad, &s0)]),
            )
            .await?
            .data;
        let f = loss_sum / nf + 0.5 * cfg.lambda * sc[1];
        let gnorm = sc[0].sqrt();
        if ctx.id() == 0 {
            out.trace.push(run.record(&ctx, k, inner_total, f, gnorm));
        }
        if !(f.is_finite() && gnorm.is_finite()) {
            return Err(Error::Diverged { iteration: k });
        }
        if gnorm <= cfg.grad_tol {
            out.converged = true;
            break;
        }
        if k == cfg.max_outer {
            break;
        }

        let subset = hessian_subset(n, cfg.hessian_fraction, cfg.seed, k);
        let denom = subset.as_ref().map_or(n, Vec::len);
        let hess = LocalHessian::new(x, cfg.loss, &margins, &shard.labels, cfg.lambda, subset, denom)?;
        let eps = eps_policy(gnorm, cfg.eps);
        let step = pcg_disco_f(
            &mut ctx,
            &hess,
            &precond,
            &grad,
            s0,
            sc[2],
            gnorm,
            eps,
            max_inner,
            cfg.record_steps,
        )
        .await?;
        if cfg.loss == LossModel::Quadratic {
            cached = Some(precond);
        }
        inner_total += step.inner_iters;

        // node 0 collects the full step so it can hold the full iterate
        let mut padded = vec![0.0; d];
        padded[shard.owned()].copy_from_slice(&step.v);
        let full = ctx
            .reduce(Phase::Integration, 0, Payload::vector(padded))
            .await?;
        if let (Some(wf), Some(v)) = (w_full.as_mut(), full) {
            damped_update(wf, &v.data, step.delta);
        }

        if cfg.record_steps {
            out.steps.push(OuterStep {
                k,
                w: w.clone(),
                grad,
                v: step.v.clone(),
                delta: step.delta,
                eps,
                inner_iters: step.inner_iters,
                pcg: step.history,
            });
        }
        damped_update(&mut w, &step.v, step.delta);
    }
    out.w = w;
    out.w_full = w_full;
    Ok(out)
}

/// Concatenates the per-node slices into full-length vectors.
pub(super) fn stitch(outputs: Vec<NodeOutput>, ledger: TrafficLedger) -> SolveReport {
    let concat = |f: &dyn Fn(&NodeOutput) -> &[f64]| -> Vec<f64> {
        outputs.iter().flat_map(|o| f(o).iter().copied()).collect()
    };
    let lead = &outputs[0];
    let w = lead.w_full.clone().unwrap_or_else(|| concat(&|o| &o.w));
    let steps = (0..lead.steps.len())
        .map(|s| {
            let head = &lead.steps[s];
            let pcg = (0..head.pcg.len())
                .map(|t| PcgIterate {
                    t: head.pcg[t].t,
                    v: concat(&|o| &o.steps[s].pcg[t].v),
                    r: concat(&|o| &o.steps[s].pcg[t].r),
                })
                .collect();
            OuterStep {
                k: head.k,
                w: concat(&|o| &o.steps[s].w),
                grad: concat(&|o| &o.steps[s].grad),
                v: concat(&|o| &o.steps[s].v),
                delta: head.delta,
                eps: head.eps,
                inner_iters: head.inner_iters,
                pcg,
            }
        })
        .collect();
    SolveReport {
        w,
        trace: lead.trace.clone(),
        ledger,
        converged: lead.converged,
        steps,
    }
}
