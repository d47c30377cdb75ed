//! Per-iteration convergence records and their CSV form.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Which stopping trigger ended a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FixedPoint,
    Kkt,
    Consensus,
    MaxIters,
}

impl StopReason {
    /// True when some tolerance fired (as opposed to the iteration cap).
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIters)
    }
}

/// Snapshot of one logged iterate.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub k: u64,
    pub x: DVector<f64>,
    /// Stacked per-node multipliers, length `m * N`.
    pub lambda: DVector<f64>,
    /// Node auxiliaries when the run maintains them.
    pub z: Option<DVector<f64>>,
    pub fp_residual: f64,
    pub kkt_residual: f64,
    pub consensus_residual: f64,
    /// Signed constraint values `A x - b`.
    pub violation: DVector<f64>,
}

impl TraceRecord {
    /// Largest positive constraint violation.
    pub fn max_violation(&self) -> f64 {
        self.violation.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0)))
    }

    /// Mean positive constraint violation (negative parts omitted).
    pub fn avg_violation(&self) -> f64 {
        if self.violation.is_empty() {
            return 0.0;
        }
        self.violation.iter().map(|&v| v.max(0.0)).sum::<f64>() / self.violation.len() as f64
    }
}

/// Full run history: thinned records plus the final iterate, the trigger that
/// fired and (for asynchronous runs) per-agent update counts.
#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub stop_reason: StopReason,
    pub iterations: u64,
    pub update_counts: Option<Vec<u64>>,
}

/// 17 significant digits; round-trips f64 exactly so replays are bit-stable.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trace {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Writes the trace in the fixed column order
    /// `k,fp_residual,kkt_residual,consensus_residual,max_violation`
    /// with `normalized_distance` appended when a reference point is given.
    pub fn write_csv<W: Write>(&self, mut w: W, x_ref: Option<&DVector<f64>>) -> Result<()> {
        let ref_norm = x_ref.map(|r| r.norm());
        write!(
            w,
            "k,fp_residual,kkt_residual,consensus_residual,max_violation"
        )?;
        if x_ref.is_some() {
            write!(w, ",normalized_distance")?;
        }
        writeln!(w)?;
        for rec in &self.records {
            write!(
                w,
                "{},{},{},{},{}",
                rec.k,
                fmt_float(rec.fp_residual),
                fmt_float(rec.kkt_residual),
                fmt_float(rec.consensus_residual),
                fmt_float(rec.max_violation()),
            )?;
            if let (Some(r), Some(norm)) = (x_ref, ref_norm) {
                write!(w, ",{}", fmt_float((&rec.x - r).norm() / norm))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, x_ref: Option<&DVector<f64>>) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, x_ref)?;
        Ok(String::from_utf8(buf).expect("csv is ascii"))
    }
}
