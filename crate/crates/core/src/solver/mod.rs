//! Damped Newton outer loop with distributed PCG inner solves.
//!
//! Each outer iteration evaluates `f(w_k)` and `∇f(w_k)`, computes an inexact
//! Newton step `v_k` with `‖H v_k − ∇f(w_k)‖ ≤ ε_k`, and applies
//! `w_{k+1} = w_k − v_k / (1 + δ_k)` where `δ_k² ≈ v_kᵀHv_k`.
//!
//! Two data layouts are supported:
//! * [`Mode::Samples`]: node 0 runs the PCG vector algebra on full-length
//!   vectors; other nodes only contribute Hessian-vector parts.
//! * [`Mode::Features`]: every node owns a slice of every vector and the work
//!   is symmetric.

mod feature;
mod hessian;
mod sample;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collectives::{Cluster, CollectiveError, NodeCtx, Scheduler, TrafficLedger};
use crate::data::{partition, DatasetShard, PartitionMode, SparseDataset};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::trace::TraceRecord;

pub use feature::pcg_disco_f;
pub use hessian::LocalHessian;
pub use sample::{broadcast_outer, pcg_disco_s, pcg_worker, TAG_CONTINUE, TAG_OUTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// DiSCO-S: data split by samples.
    #[serde(rename = "s")]
    Samples,
    /// DiSCO-F: data split by features.
    #[serde(rename = "f")]
    Features,
}

impl Mode {
    pub fn partition_mode(self) -> PartitionMode {
        match self {
            Mode::Samples => PartitionMode::BySamples,
            Mode::Features => PartitionMode::ByFeatures,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Samples => "s",
            Mode::Features => "f",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" | "S" => Ok(Mode::Samples),
            "f" | "F" => Ok(Mode::Features),
            other => Err(Error::config("mode", format!("expected s or f, got {other:?}"))),
        }
    }
}

/// Inner tolerance `ε_k` as a function of `‖∇f(w_k)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsPolicy {
    /// `ε_k = β‖∇f(w_k)‖`
    Relative { beta: f64 },
    /// `ε_k = eps`
    Absolute { eps: f64 },
}

impl Default for EpsPolicy {
    fn default() -> Self {
        EpsPolicy::Relative { beta: 1.0 / 20.0 }
    }
}

pub fn eps_policy(grad_norm: f64, policy: EpsPolicy) -> f64 {
    match policy {
        EpsPolicy::Relative { beta } => beta * grad_norm,
        EpsPolicy::Absolute { eps } => eps,
    }
}

/// Structure of the preconditioner used in sample mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondLayout {
    /// Full `d × d` subsampled Hessian.
    #[default]
    Full,
    /// Only the diagonal blocks of a balanced split of the features into this
    /// many blocks, i.e. exactly what feature mode with that many nodes uses.
    FeatureBlocks(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub loss: LossModel,
    pub lambda: f64,
    pub mu: f64,
    pub tau: usize,
    pub mode: Mode,
    pub nodes: usize,
    pub eps: EpsPolicy,
    /// Fraction of samples drawn (once per outer iteration) for the Hessian.
    pub hessian_fraction: f64,
    pub max_outer: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Cap on PCG iterations per outer step; `None` means `2d + 10`.
    pub max_inner: Option<usize>,
    pub precond_layout: PrecondLayout,
    pub scheduler: Scheduler,
    /// Keep per-iteration iterates for diagnostics (costly for large `d`).
    pub record_steps: bool,
    /// When false the trace's wall-clock column is written as zero.
    pub record_wall_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            loss: LossModel::Logistic,
            lambda: 1e-4,
            mu: 1e-2,
            tau: 100,
            mode: Mode::Features,
            nodes: 1,
            eps: EpsPolicy::default(),
            hessian_fraction: 1.0,
            max_outer: 100,
            grad_tol: 1e-10,
            seed: 0,
            max_inner: None,
            precond_layout: PrecondLayout::Full,
            scheduler: Scheduler::Threaded,
            record_steps: false,
            record_wall_time: true,
        }
    }
}

impl SolverConfig {
    /// Checks ranges that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu", format!("must be nonnegative, got {}", self.mu)));
        }
        if self.tau == 0 {
            return Err(Error::config("tau", "must be at least 1"));
        }
        if self.nodes == 0 {
            return Err(Error::config("nodes", "must be at least 1"));
        }
        match self.eps {
            EpsPolicy::Relative { beta } if !(beta > 0.0 && beta.is_finite()) => {
                return Err(Error::config("eps-beta", format!("must be positive, got {beta}")));
            }
            EpsPolicy::Absolute { eps } if !(eps >= 0.0 && eps.is_finite()) => {
                return Err(Error::config("eps-abs", format!("must be nonnegative, got {eps}")));
            }
            _ => {}
        }
        if !(self.hessian_fraction > 0.0 && self.hessian_fraction <= 1.0) {
            return Err(Error::config(
                "hessian-fraction",
                format!("must lie in (0, 1], got {}", self.hessian_fraction),
            ));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::config("grad-tol", "must be nonnegative"));
        }
        if self.max_inner == Some(0) {
            return Err(Error::config("max-inner", "must be at least 1"));
        }
        if self.precond_layout == PrecondLayout::FeatureBlocks(0) {
            return Err(Error::config("precond-layout", "needs at least one block"));
        }
        Ok(())
    }

    /// Checks ranges against the dataset dimensions.
    pub fn validate_for(&self, n: usize, d: usize) -> Result<()> {
        self.validate()?;
        let (dim, name) = match self.mode {
            Mode::Samples => (n, "samples"),
            Mode::Features => (d, "features"),
        };
        if self.nodes > dim {
            return Err(Error::config(
                "nodes",
                format!("{} nodes exceed the {dim} {name}", self.nodes),
            ));
        }
        // sample mode draws the preconditioner samples from node 0's block
        let available = match self.mode {
            Mode::Samples => n.div_ceil(self.nodes),
            Mode::Features => n,
        };
        if self.tau > available {
            return Err(Error::config(
                "tau",
                format!("{} exceeds the {available} samples available to the preconditioner", self.tau),
            ));
        }
        if let PrecondLayout::FeatureBlocks(k) = self.precond_layout {
            if k > d {
                return Err(Error::config("precond-layout", format!("{k} blocks exceed {d} features")));
            }
        }
        Ok(())
    }

    fn max_inner_for(&self, d: usize) -> usize {
        self.max_inner.unwrap_or(2 * d + 10)
    }
}

/// Speed-up bound `1 / (s + (1 − s)/m)` for a serial fraction `s` on `m` nodes.
pub fn amdahl_speedup(serial_fraction: f64, m: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&serial_fraction) {
        return Err(Error::config(
            "serial-fraction",
            format!("must lie in [0, 1], got {serial_fraction}"),
        ));
    }
    if m == 0 {
        return Err(Error::config("nodes", "must be at least 1"));
    }
    Ok(1.0 / (serial_fraction + (1.0 - serial_fraction) / m as f64))
}

/// The uniformly drawn Hessian sample set for outer iteration `k`, sorted;
/// `None` when every sample is used. Every node derives the same set from
/// the seed, so no communication is needed.
pub fn hessian_subset(n: usize, fraction: f64, seed: u64, k: usize) -> Option<Vec<usize>> {
    if fraction >= 1.0 {
        return None;
    }
    let size = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// One PCG iterate, recorded when [`SolverConfig::record_steps`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgIterate {
    pub t: usize,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
}

/// Result of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStep {
    pub v: Vec<f64>,
    pub delta: f64,
    pub inner_iters: usize,
    /// Collective calls issued in the pcg-iteration phase.
    pub comm_rounds: u64,
    /// Final recurrence residual `‖r‖`.
    pub residual_norm: f64,
    pub history: Vec<PcgIterate>,
}

impl NewtonStep {
    fn zero(dim: usize) -> Self {
        NewtonStep {
            v: vec![0.0; dim],
            delta: 0.0,
            inner_iters: 0,
            comm_rounds: 0,
            residual_norm: 0.0,
            history: Vec::new(),
        }
    }
}

/// Diagnostics for one outer iteration, with full-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub k: usize,
    pub w: Vec<f64>,
    pub grad: Vec<f64>,
    pub v: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
    pub inner_iters: usize,
    pub pcg: Vec<PcgIterate>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub w: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub ledger: TrafficLedger,
    pub converged: bool,
    /// Populated only with [`SolverConfig::record_steps`].
    pub steps: Vec<OuterStep>,
}

impl SolveReport {
    pub fn outer_iters(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn inner_iters(&self) -> usize {
        self.trace.last().map_or(0, |t| t.t_total_inner)
    }

    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace has the initial record")
    }
}

/// What one node hands back after the run.
#[derive(Debug, Default)]
struct NodeOutput {
    /// Node-local or full weights, depending on the mode.
    w: Vec<f64>,
    /// Feature mode: the full iterate assembled on node 0.
    w_full: Option<Vec<f64>>,
    trace: Vec<TraceRecord>,
    converged: bool,
    steps: Vec<OuterStep>,
}

/// Shared read-only run context handed to every node program.
struct RunCtx<'a> {
    cfg: &'a SolverConfig,
    start: Instant,
}

impl RunCtx<'_> {
    fn record(&self, ctx: &NodeCtx, k: usize, inner: usize, f: f64, grad_norm: f64) -> TraceRecord {
        let total = ctx.ledger().total();
        TraceRecord {
            k,
            t_total_inner: inner,
            f_value: f,
            grad_norm,
            rounds_cum: total.rounds,
            scalars_cum: total.scalars,
            vec_elements_cum: total.vector_elements,
            wall_seconds: if self.cfg.record_wall_time {
                self.start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            grouped_rounds_cum: total.grouped_rounds,
        }
    }
}

/// `w ← w − v / (1 + δ)`
fn damped_update(w: &mut [f64], v: &[f64], delta: f64) {
    let denom = 1.0 + delta;
    for (wi, vi) in w.iter_mut().zip(v) {
        *wi -= vi / denom;
    }
}

/// Partitions `data` according to the config and runs the solver.
pub fn solve(data: &SparseDataset, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate_for(data.n(), data.d())?;
    let shards = partition(data, cfg.nodes, cfg.mode.partition_mode())?;
    solve_shards(&shards, cfg)
}

/// Runs the solver on pre-partitioned shards (one node per shard).
pub fn solve_shards(shards: &[DatasetShard], cfg: &SolverConfig) -> Result<SolveReport> {
    let first = shards
        .first()
        .ok_or_else(|| Error::config("nodes", "no shards"))?;
    if shards.len() != cfg.nodes {
        return Err(Error::config(
            "nodes",
            format!("{} shards for {} nodes", shards.len(), cfg.nodes),
        ));
    }
    if shards.iter().any(|s| s.mode != cfg.mode.partition_mode()) {
        return Err(Error::config("mode", "shards were partitioned for the other mode"));
    }
    cfg.validate_for(first.n_total, first.d_total)?;

    let cluster = Cluster::new(cfg.nodes);
    let run = RunCtx {
        cfg,
        start: Instant::now(),
    };
    let run = &run;
    let outputs: Vec<Result<NodeOutput>> = cluster.run(cfg.scheduler, |ctx| async move {
        let shard = &shards[ctx.id()];
        match cfg.mode {
            Mode::Samples => sample::run_node(ctx, shard, run).await,
            Mode::Features => feature::run_node(ctx, shard, run).await,
        }
    });

    let outputs = collect_outputs(outputs)?;
    let ledger = cluster.ledger_snapshot();
    Ok(match cfg.mode {
        Mode::Samples => {
            let master = outputs.into_iter().next().unwrap();
            SolveReport {
                w: master.w,
                trace: master.trace,
                ledger,
                converged: master.converged,
                steps: master.steps,
            }
        }
        Mode::Features => feature::stitch(outputs, ledger),
    })
}

/// Returns the root cause if any node failed. A node's own error is preferred
/// over the collective failures it triggers on the others.
fn collect_outputs(outputs: Vec<Result<NodeOutput>>) -> Result<Vec<NodeOutput>> {
    let mut root_cause = None;
    let mut secondary = None;
    let mut ok = Vec::with_capacity(outputs.len());
    for out in outputs {
        match out {
            Ok(o) => ok.push(o),
            Err(Error::Collective(e @ CollectiveError::NodeExited { .. })) => {
                secondary.get_or_insert(Error::Collective(e));
            }
            Err(e) => {
                root_cause.get_or_insert(e);
            }
        }
    }
    match root_cause.or(secondary) {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}
