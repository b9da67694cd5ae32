//! Per-outer-iteration convergence trace and its CSV form.

use std::io;

use serde::{Deserialize, Serialize};

/// One row per outer iteration, taken right after `f(w_k)` and `‖∇f(w_k)‖`
/// are known. Communication counters are cumulative over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// PCG iterations performed before this row.
    pub t_total_inner: usize,
    pub f_value: f64,
    pub grad_norm: f64,
    pub rounds_cum: u64,
    pub scalars_cum: u64,
    pub vec_elements_cum: u64,
    pub wall_seconds: f64,
    /// Rounds that carry a vector payload.
    pub grouped_rounds_cum: u64,
}

pub const TRACE_HEADER: [&str; 9] = [
    "k",
    "t_total_inner",
    "f_value",
    "grad_norm",
    "rounds_cum",
    "scalars_cum",
    "vec_elements_cum",
    "wall_seconds",
    "grouped_rounds_cum",
];

pub fn write_trace(records: &[TraceRecord], out: impl io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(TRACE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(input: impl io::Read) -> csv::Result<Vec<TraceRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
