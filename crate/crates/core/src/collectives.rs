//! In-process SPMD cluster with metered collective operations.
//!
//! Every node runs the same async program on its own [`NodeCtx`]. Nodes
//! interact only through [`NodeCtx::broadcast`], [`NodeCtx::reduce`] and
//! [`NodeCtx::reduce_all`]; each call is a barrier. Reductions are summed in
//! node-id order by whichever node completes the rendezvous, so results do not
//! depend on the scheduler.
//!
//! Collective calls are matched by sequence number. A node whose call at some
//! sequence number disagrees with the others (kind, root, payload shape), or a
//! node that exits while others still wait on it, poisons the cluster: all
//! pending and future calls fail with a [`CollectiveError`] instead of
//! deadlocking.

use std::collections::HashMap;
use std::fmt;
use std::future::{poll_fn, Future};
use std::io;
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Poll, Waker};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    OuterGradient,
    PcgIteration,
    Integration,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::OuterGradient, Phase::PcgIteration, Phase::Integration];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::OuterGradient => "outer-gradient",
            Phase::PcgIteration => "pcg-iteration",
            Phase::Integration => "integration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectiveKind {
    Broadcast,
    Reduce,
    ReduceAll,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 3] = [
        CollectiveKind::Broadcast,
        CollectiveKind::Reduce,
        CollectiveKind::ReduceAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CollectiveKind::Broadcast => "broadcast",
            CollectiveKind::Reduce => "reduce",
            CollectiveKind::ReduceAll => "reduce-all",
        }
    }
}

/// Whether a payload is metered as vector elements or as scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadClass {
    Vector,
    Scalar,
}

/// Data carried by one collective call.
///
/// `control` holds out-of-band words piggybacked on the message (loop
/// continuation tags, stopping-test norms). They follow the same combine rule
/// as `data` but are metered separately from the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub data: Vec<f64>,
    pub control: Vec<f64>,
    class: PayloadClass,
}

impl Payload {
    pub fn vector(data: Vec<f64>) -> Self {
        Payload {
            data,
            control: Vec::new(),
            class: PayloadClass::Vector,
        }
    }

    pub fn scalars(data: Vec<f64>) -> Self {
        Payload {
            data,
            control: Vec::new(),
            class: PayloadClass::Scalar,
        }
    }

    pub fn with_control(mut self, control: Vec<f64>) -> Self {
        self.control = control;
        self
    }

    pub fn class(&self) -> PayloadClass {
        self.class
    }

    fn add_assign(&mut self, other: &Payload) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        for (a, b) in self.control.iter_mut().zip(&other.control) {
            *a += b;
        }
    }
}

/// Counters for one (phase, kind) cell of the ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// One per collective call.
    pub rounds: u64,
    /// One per call that carries a vector payload. Scalar-only calls are not
    /// counted, so this is the per-message count used when comparing
    /// partitioning schemes.
    pub grouped_rounds: u64,
    pub scalars: u64,
    pub vector_elements: u64,
    pub control_words: u64,
}

impl Counters {
    fn add(&mut self, other: &Counters) {
        self.rounds += other.rounds;
        self.grouped_rounds += other.grouped_rounds;
        self.scalars += other.scalars;
        self.vector_elements += other.vector_elements;
        self.control_words += other.control_words;
    }

    /// Payload elements of all calls, scalars included.
    pub fn elements(&self) -> u64 {
        self.scalars + self.vector_elements
    }

    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            rounds: self.rounds - earlier.rounds,
            grouped_rounds: self.grouped_rounds - earlier.grouped_rounds,
            scalars: self.scalars - earlier.scalars,
            vector_elements: self.vector_elements - earlier.vector_elements,
            control_words: self.control_words - earlier.control_words,
        }
    }
}

/// Monotone communication counters broken down by phase and collective kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    cells: [[Counters; 3]; 3],
}

impl TrafficLedger {
    fn record(&mut self, phase: Phase, kind: CollectiveKind, payload: &Payload) {
        let c = &mut self.cells[phase as usize][kind as usize];
        c.rounds += 1;
        c.control_words += payload.control.len() as u64;
        match payload.class {
            PayloadClass::Vector => {
                c.grouped_rounds += 1;
                c.vector_elements += payload.data.len() as u64;
            }
            PayloadClass::Scalar => c.scalars += payload.data.len() as u64,
        }
    }

    pub fn get(&self, phase: Phase, kind: CollectiveKind) -> Counters {
        self.cells[phase as usize][kind as usize]
    }

    pub fn phase(&self, phase: Phase) -> Counters {
        let mut total = Counters::default();
        for c in &self.cells[phase as usize] {
            total.add(c);
        }
        total
    }

    pub fn kind(&self, kind: CollectiveKind) -> Counters {
        let mut total = Counters::default();
        for row in &self.cells {
            total.add(&row[kind as usize]);
        }
        total
    }

    pub fn total(&self) -> Counters {
        let mut total = Counters::default();
        for phase in Phase::ALL {
            total.add(&self.phase(phase));
        }
        total
    }

    /// Writes one row per (phase, kind) cell, zero rows included.
    pub fn write_csv(&self, out: impl io::Write) -> csv::Result<()> {
        #[derive(Serialize)]
        struct Row {
            phase: Phase,
            kind: CollectiveKind,
            rounds: u64,
            scalars: u64,
            vector_elements: u64,
            grouped_rounds: u64,
            control_words: u64,
        }
        let mut w = csv::Writer::from_writer(out);
        for phase in Phase::ALL {
            for kind in CollectiveKind::ALL {
                let c = self.get(phase, kind);
                w.serialize(Row {
                    phase,
                    kind,
                    rounds: c.rounds,
                    scalars: c.scalars,
                    vector_elements: c.vector_elements,
                    grouped_rounds: c.grouped_rounds,
                    control_words: c.control_words,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CallSig {
    kind: CollectiveKind,
    root: usize,
    class: PayloadClass,
    len: usize,
    control_len: usize,
}

impl fmt::Display for CallSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(root={}, {:?}, len={}, control={})",
            self.kind.as_str(),
            self.root,
            self.class,
            self.len,
            self.control_len
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectiveError {
    #[error("collective #{seq}: node {node} called {found}, expected {expected}")]
    SequenceMismatch {
        seq: u64,
        node: usize,
        expected: String,
        found: String,
    },
    #[error("collective #{seq}: node {node} exited without joining")]
    NodeExited { seq: u64, node: usize },
    #[error("root {root} out of range for {m} nodes")]
    InvalidRoot { root: usize, m: usize },
}

struct Rendezvous {
    sig: CallSig,
    phase: Option<Phase>,
    contributions: Vec<Option<Payload>>,
    arrived: usize,
    completed: bool,
    results: Vec<Option<Option<Payload>>>,
    remaining: usize,
}

impl Rendezvous {
    fn new(sig: CallSig, m: usize) -> Self {
        Rendezvous {
            sig,
            phase: None,
            contributions: vec![None; m],
            arrived: 0,
            completed: false,
            results: vec![None; m],
            remaining: m,
        }
    }

    /// Combines contributions in node order and fills in per-node results.
    fn complete(&mut self) -> Payload {
        let parts: Vec<Payload> = self
            .contributions
            .iter_mut()
            .map(|c| c.take().expect("all nodes arrived"))
            .collect();
        let m = parts.len();
        let (combined, recipients): (Payload, Vec<bool>) = match self.sig.kind {
            CollectiveKind::Broadcast => (parts[self.sig.root].clone(), vec![true; m]),
            CollectiveKind::ReduceAll | CollectiveKind::Reduce => {
                let mut acc = parts[0].clone();
                for p in &parts[1..] {
                    acc.add_assign(p);
                }
                let recipients = if self.sig.kind == CollectiveKind::Reduce {
                    (0..m).map(|j| j == self.sig.root).collect()
                } else {
                    vec![true; m]
                };
                (acc, recipients)
            }
        };
        for (slot, gets) in self.results.iter_mut().zip(recipients) {
            *slot = Some(gets.then(|| combined.clone()));
        }
        self.completed = true;
        // the ledger meters what one node contributed
        parts.into_iter().nth(self.sig.root).unwrap()
    }
}

struct State {
    pending: HashMap<u64, Rendezvous>,
    wakers: Vec<Option<Waker>>,
    exited: Vec<Option<u64>>,
    failure: Option<CollectiveError>,
    ledger: TrafficLedger,
}

impl State {
    fn wake_all(&mut self) {
        for w in self.wakers.iter_mut().filter_map(Option::take) {
            w.wake();
        }
    }

    fn fail(&mut self, err: CollectiveError) -> CollectiveError {
        let err = self.failure.get_or_insert(err).clone();
        self.wake_all();
        err
    }
}

struct Shared {
    m: usize,
    state: Mutex<State>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        // a node panicking mid-collective must not wedge the others
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn poll_collective(
        &self,
        node: usize,
        seq: u64,
        sig: CallSig,
        deposit: &mut Option<(Phase, Payload)>,
        waker: &Waker,
    ) -> Poll<Result<Option<Payload>, CollectiveError>> {
        let m = self.m;
        let mut guard = self.lock();
        let st = &mut *guard;
        if let Some(err) = &st.failure {
            return Poll::Ready(Err(err.clone()));
        }

        if let Some((phase, payload)) = deposit.take() {
            if sig.root >= m {
                return Poll::Ready(Err(st.fail(CollectiveError::InvalidRoot { root: sig.root, m })));
            }
            let rv = st
                .pending
                .entry(seq)
                .or_insert_with(|| Rendezvous::new(sig, m));
            if rv.sig != sig {
                let err = CollectiveError::SequenceMismatch {
                    seq,
                    node,
                    expected: rv.sig.to_string(),
                    found: sig.to_string(),
                };
                return Poll::Ready(Err(st.fail(err)));
            }
            // the root names the phase; reduce-all has no root, node 0 does
            if node == sig.root {
                rv.phase = Some(phase);
            }
            rv.contributions[node] = Some(payload);
            rv.arrived += 1;
            if rv.arrived == m {
                let metered = rv.complete();
                let phase = rv.phase.expect("root contributed");
                st.ledger.record(phase, sig.kind, &metered);
                st.wake_all();
            }
        }

        let rv = st.pending.get_mut(&seq).expect("rendezvous registered");
        if rv.completed {
            let out = rv.results[node].take().expect("result taken once");
            rv.remaining -= 1;
            if rv.remaining == 0 {
                st.pending.remove(&seq);
            }
            return Poll::Ready(Ok(out));
        }

        let missing = (0..m).find(|&j| {
            rv.contributions[j].is_none() && st.exited[j].is_some_and(|calls| calls <= seq)
        });
        if let Some(j) = missing {
            return Poll::Ready(Err(st.fail(CollectiveError::NodeExited { seq, node: j })));
        }

        st.wakers[node] = Some(waker.clone());
        Poll::Pending
    }
}

/// How node programs are driven.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduler {
    /// One OS thread per node.
    #[default]
    Threaded,
    /// All nodes interleaved on the calling thread.
    RoundRobin,
}

pub struct Cluster {
    shared: Arc<Shared>,
}

impl Cluster {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "cluster needs at least one node");
        Cluster {
            shared: Arc::new(Shared {
                m,
                state: Mutex::new(State {
                    pending: HashMap::new(),
                    wakers: vec![None; m],
                    exited: vec![None; m],
                    failure: None,
                    ledger: TrafficLedger::default(),
                }),
            }),
        }
    }

    pub fn nodes(&self) -> usize {
        self.shared.m
    }

    pub fn ledger_snapshot(&self) -> TrafficLedger {
        self.shared.lock().ledger
    }

    /// Runs `program` on every node and returns the per-node outputs in node
    /// order. The ledger keeps accumulating across runs.
    pub fn run<T, F, Fut>(&self, scheduler: Scheduler, program: F) -> Vec<T>
    where
        F: Fn(NodeCtx) -> Fut + Sync,
        Fut: Future<Output = T>,
        T: Send,
    {
        let m = self.shared.m;
        {
            let mut st = self.shared.lock();
            st.pending.clear();
            st.wakers.iter_mut().for_each(|w| *w = None);
            st.exited.iter_mut().for_each(|e| *e = None);
            st.failure = None;
        }
        let ctxs: Vec<NodeCtx> = (0..m)
            .map(|id| NodeCtx {
                id,
                m,
                seq: 0,
                shared: Arc::clone(&self.shared),
            })
            .collect();
        match scheduler {
            Scheduler::RoundRobin => {
                futures::executor::block_on(futures::future::join_all(ctxs.into_iter().map(&program)))
            }
            Scheduler::Threaded => std::thread::scope(|s| {
                let program = &program;
                let handles: Vec<_> = ctxs
                    .into_iter()
                    .map(|ctx| s.spawn(move || futures::executor::block_on(program(ctx))))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                    .collect()
            }),
        }
    }
}

/// A node's handle onto the cluster. Dropping it marks the node as exited.
pub struct NodeCtx {
    id: usize,
    m: usize,
    seq: u64,
    shared: Arc<Shared>,
}

impl NodeCtx {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn nodes(&self) -> usize {
        self.m
    }

    /// Number of collectives this node has issued.
    pub fn calls(&self) -> u64 {
        self.seq
    }

    /// Ledger as of this node's last completed collective. Consistent because
    /// no later collective can complete until this node joins it.
    pub fn ledger(&self) -> TrafficLedger {
        self.shared.lock().ledger
    }

    async fn collective(
        &mut self,
        kind: CollectiveKind,
        root: usize,
        phase: Phase,
        payload: Payload,
    ) -> Result<Option<Payload>, CollectiveError> {
        let seq = self.seq;
        self.seq += 1;
        let sig = CallSig {
            kind,
            root,
            class: payload.class,
            len: payload.data.len(),
            control_len: payload.control.len(),
        };
        let mut deposit = Some((phase, payload));
        let shared = &self.shared;
        let node = self.id;
        poll_fn(move |cx| shared.poll_collective(node, seq, sig, &mut deposit, cx.waker())).await
    }

    /// Every node receives the root's payload. Non-root nodes pass a payload
    /// of the same shape whose contents are ignored.
    pub async fn broadcast(
        &mut self,
        phase: Phase,
        root: usize,
        payload: Payload,
    ) -> Result<Payload, CollectiveError> {
        let out = self
            .collective(CollectiveKind::Broadcast, root, phase, payload)
            .await?;
        Ok(out.expect("broadcast reaches every node"))
    }

    /// Elementwise sum over nodes, delivered to every node.
    pub async fn reduce_all(
        &mut self,
        phase: Phase,
        payload: Payload,
    ) -> Result<Payload, CollectiveError> {
        let out = self
            .collective(CollectiveKind::ReduceAll, 0, phase, payload)
            .await?;
        Ok(out.expect("reduce-all reaches every node"))
    }

    /// Elementwise sum over nodes, delivered to `root` only.
    pub async fn reduce(
        &mut self,
        phase: Phase,
        root: usize,
        payload: Payload,
    ) -> Result<Option<Payload>, CollectiveError> {
        self.collective(CollectiveKind::Reduce, root, phase, payload)
            .await
    }
}

impl Drop for NodeCtx {
    fn drop(&mut self) {
        let mut st = self.shared.lock();
        st.exited[self.id] = Some(self.seq);
        st.wake_all();
    }
}
