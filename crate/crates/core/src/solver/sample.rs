//! Sample-partitioned solver. Node 0 owns all PCG vectors; the others wait in
//! [`pcg_worker`] and only contribute their share of `H·u`.

use crate::collectives::{NodeCtx, Payload, Phase};
use crate::data::{DatasetShard, Partition, PartitionMode};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, xpby};
use crate::loss::LossModel;
use crate::precond::{curvatures, BlockDiagonal, Preconditioner, WoodburyPrecond};

use super::{
    damped_update, eps_policy, hessian_subset, LocalHessian, NewtonStep, NodeOutput, OuterStep,
    PcgIterate, PrecondLayout, RunCtx,
};

/// Control word on a master broadcast: the payload is a PCG direction.
pub const TAG_CONTINUE: f64 = 1.0;
/// Control word on a master broadcast: the payload is the next iterate `w`.
pub const TAG_OUTER: f64 = 2.0;

fn tag_of(msg: &Payload) -> Result<f64> {
    match msg.control.as_slice() {
        [t] if *t == TAG_CONTINUE || *t == TAG_OUTER => Ok(*t),
        other => Err(Error::Protocol {
            reason: format!("unexpected broadcast control words {other:?}"),
        }),
    }
}

/// Sends `w` from node 0 to everyone, ending any worker loop.
pub async fn broadcast_outer(ctx: &mut NodeCtx, w: &[f64]) -> Result<Vec<f64>> {
    let payload = if ctx.id() == 0 {
        Payload::vector(w.to_vec())
    } else {
        Payload::vector(vec![0.0; w.len()])
    };
    let msg = ctx
        .broadcast(Phase::OuterGradient, 0, payload.with_control(vec![TAG_OUTER]))
        .await?;
    if tag_of(&msg)? != TAG_OUTER {
        return Err(Error::Protocol {
            reason: "expected the outer iterate".into(),
        });
    }
    Ok(msg.data)
}

/// Master side of PCG on `H v = grad` with `‖H v − grad‖ ≤ eps`.
///
/// Each iteration costs one broadcast of `u` and one reduce-all of the
/// Hessian parts; everything else is local to node 0.
pub async fn pcg_disco_s(
    ctx: &mut NodeCtx,
    hess: &LocalHessian<'_>,
    precond: &dyn Preconditioner,
    grad: &[f64],
    eps: f64,
    max_iters: usize,
    record: bool,
) -> Result<NewtonStep> {
    let d = grad.len();
    Error::check_len("gradient", hess.dim(), d)?;
    Error::check_len("preconditioner", d, precond.dim())?;
    let before = ctx.ledger().phase(Phase::PcgIteration);

    let mut r = grad.to_vec();
    let rnorm0 = norm(&r);
    if rnorm0 <= eps {
        let mut step = NewtonStep::zero(d);
        step.residual_norm = rnorm0;
        return Ok(step);
    }
    let mut u = precond.solve(&r)?;
    let mut rs = dot(&r, &u);
    let mut v = vec![0.0; d];
    let mut hv = vec![0.0; d];
    let mut history = Vec::new();
    let mut t = 0;
    loop {
        let msg = ctx
            .broadcast(
                Phase::PcgIteration,
                0,
                Payload::vector(u.clone()).with_control(vec![TAG_CONTINUE]),
            )
            .await?;
        let part = hess.local_part(&msg.data);
        let sum = ctx
            .reduce_all(Phase::PcgIteration, Payload::vector(part))
            .await?;
        let hu = hess.finish(sum.data, &u);

        let uhu = dot(&u, &hu);
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
        let rnorm = norm(&r);
        if record {
            history.push(PcgIterate {
                t,
                v: v.clone(),
                r: r.clone(),
            });
        }
        if rnorm <= eps {
            // δ² = v_{t+1}ᵀ H v_t + α v_{t+1}ᵀ H u_t
            let delta = (dot(&v, &hv_prev) + alpha * dot(&v, &hu)).max(0.0).sqrt();
            let comm = ctx.ledger().phase(Phase::PcgIteration).since(&before);
            return Ok(NewtonStep {
                v,
                delta,
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
        let s = precond.solve(&r)?;
        let rs_new = dot(&r, &s);
        let beta = rs_new / rs;
        rs = rs_new;
        xpby(&s, beta, &mut u);
    }
}

/// Worker side of [`pcg_disco_s`]: answers Hessian requests until node 0
/// broadcasts the next outer iterate, which is returned.
pub async fn pcg_worker(ctx: &mut NodeCtx, hess: &LocalHessian<'_>) -> Result<Vec<f64>> {
    let d = hess.dim();
    loop {
        let msg = ctx
            .broadcast(
                Phase::PcgIteration,
                0,
                Payload::vector(vec![0.0; d]).with_control(vec![0.0]),
            )
            .await?;
        if tag_of(&msg)? == TAG_OUTER {
            return Ok(msg.data);
        }
        let part = hess.local_part(&msg.data);
        ctx.reduce_all(Phase::PcgIteration, Payload::vector(part))
            .await?;
    }
}

fn build_precond(
    shard: &DatasetShard,
    margins: &[f64],
    loss: LossModel,
    lambda: f64,
    mu: f64,
    tau: usize,
    layout: PrecondLayout,
) -> Result<Box<dyn Preconditioner>> {
    let curv = curvatures(loss, &margins[..tau], &shard.labels[..tau]);
    Ok(match layout {
        PrecondLayout::Full => Box::new(WoodburyPrecond::build(&shard.matrix, &curv, lambda, mu)?),
        PrecondLayout::FeatureBlocks(k) => {
            let part = Partition::balanced(PartitionMode::ByFeatures, shard.d_total, k)?;
            Box::new(BlockDiagonal::build(&shard.matrix, &curv, lambda, mu, &part)?)
        }
    })
}

pub(super) async fn run_node(
    mut ctx: NodeCtx,
    shard: &DatasetShard,
    run: &RunCtx<'_>,
) -> Result<NodeOutput> {
    let cfg = run.cfg;
    let (n, d) = (shard.n_total, shard.d_total);
    let x = &shard.matrix;
    let master = ctx.id() == 0;
    let nf = n as f64;
    let max_inner = cfg.max_inner_for(d);

    let mut out = NodeOutput::default();
    let mut w = vec![0.0; d];
    // workers learn w_{k+1} from the broadcast that ends their PCG loop
    let mut received: Option<Vec<f64>> = None;
    let mut cached: Option<Box<dyn Preconditioner>> = None;
    let mut inner_total = 0;

    for k in 0..=cfg.max_outer {
        w = match received.take() {
            Some(next) => next,
            None => broadcast_outer(&mut ctx, &w).await?,
        };

        let margins: Vec<f64> = (0..x.ncols()).map(|i| x.col_dot(i, &w)).collect();
        let mut acc = vec![0.0; d + 1];
        for (i, (&m, &y)) in margins.iter().zip(&shard.labels).enumerate() {
            x.col_axpy(i, cfg.loss.derivative(m, y), &mut acc[..d]);
            acc[d] += cfg.loss.value(m, y);
        }
        let red = ctx
            .reduce_all(Phase::OuterGradient, Payload::vector(acc))
            .await?
            .data;
        let grad: Vec<f64> = red[..d]
            .iter()
            .zip(&w)
            .map(|(g, wi)| g / nf + cfg.lambda * wi)
            .collect();
        let f = red[d] / nf + 0.5 * cfg.lambda * dot(&w, &w);
        let gnorm = norm(&grad);
        if master {
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
        let (cols, denom) = match subset {
            None => (None, n),
            Some(s) => {
                let owned = shard.owned();
                let local = s
                    .iter()
                    .filter(|i| owned.contains(i))
                    .map(|i| i - owned.start)
                    .collect();
                (Some(local), s.len())
            }
        };
        let hess = LocalHessian::new(x, cfg.loss, &margins, &shard.labels, cfg.lambda, cols, denom)?;

        if master {
            let precond = match cached.take() {
                Some(p) => p,
                None => build_precond(
                    shard,
                    &margins,
                    cfg.loss,
                    cfg.lambda,
                    cfg.mu,
                    cfg.tau,
                    cfg.precond_layout,
                )?,
            };
            let eps = eps_policy(gnorm, cfg.eps);
            let step = pcg_disco_s(
                &mut ctx,
                &hess,
                precond.as_ref(),
                &grad,
                eps,
                max_inner,
                cfg.record_steps,
            )
            .await?;
            if cfg.loss == LossModel::Quadratic {
                // constant curvature: P does not depend on w
                cached = Some(precond);
            }
            inner_total += step.inner_iters;
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
        } else {
            received = Some(pcg_worker(&mut ctx, &hess).await?);
        }
    }
    out.w = w;
    Ok(out)
}
