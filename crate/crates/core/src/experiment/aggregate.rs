//! Cross-seed aggregation: per-iteration mean and quartile bands of the
//! squared stationary error, final-error statistics, divergence counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::io::PlotRow;
use crate::fqi::FqiRunRecord;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Linear-interpolation quantile (the common "type 7" definition):
/// index `h = (n - 1) q`, interpolate between the surrounding order
/// statistics. `values` need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q));
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in quantile input"));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalErrorStats {
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

/// Aggregate across completed seeds of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub schema_version: u32,
    pub arm: String,
    pub seeds_completed: Vec<u64>,
    pub seeds_failed: Vec<u64>,
    pub diverged_runs: usize,
    /// Per-iteration mean / q25 / q75 of the squared stationary error,
    /// over runs that reached that iteration.
    pub per_iteration: Vec<PlotRow>,
    /// Final-error statistics over non-diverged completed runs.
    pub final_error_sq: Option<FinalErrorStats>,
}

/// Builds the aggregate summary from per-seed results, in seed order.
pub fn aggregate(
    arm: &str,
    completed: &[(u64, FqiRunRecord)],
    failed: &[u64],
) -> Result<AggregateSummary> {
    if completed.is_empty() {
        return Err(Error::NoCompletedRuns(format!(
            "arm {arm}: every seed failed"
        )));
    }
    let max_len = completed
        .iter()
        .map(|(_, r)| r.rows.len())
        .max()
        .unwrap_or(0);
    let mut per_iteration = Vec::with_capacity(max_len);
    for i in 0..max_len {
        let column: Vec<f64> = completed
            .iter()
            .filter_map(|(_, r)| r.rows.get(i))
            .map(|row| row.error_sq())
            .filter(|v| v.is_finite())
            .collect();
        if column.is_empty() {
            continue;
        }
        per_iteration.push(PlotRow {
            iteration: i,
            mean: column.iter().sum::<f64>() / column.len() as f64,
            q25: quantile(&column, 0.25),
            q75: quantile(&column, 0.75),
        });
    }
    let diverged_runs = completed.iter().filter(|(_, r)| r.diverged).count();
    let finals: Vec<f64> = completed
        .iter()
        .filter(|(_, r)| !r.diverged)
        .map(|(_, r)| r.final_error * r.final_error)
        .filter(|v| v.is_finite())
        .collect();
    let final_error_sq = if finals.is_empty() {
        None
    } else {
        Some(FinalErrorStats {
            mean: finals.iter().sum::<f64>() / finals.len() as f64,
            q25: quantile(&finals, 0.25),
            median: quantile(&finals, 0.5),
            q75: quantile(&finals, 0.75),
            min: finals.iter().copied().fold(f64::INFINITY, f64::min),
            max: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    };
    Ok(AggregateSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        arm: arm.to_string(),
        seeds_completed: completed.iter().map(|(s, _)| *s).collect(),
        seeds_failed: failed.to_vec(),
        diverged_runs,
        per_iteration,
        final_error_sq,
    })
}
