//! Stable on-disk formats: per-run CSV traces, versioned JSON envelopes
//! for MDPs / Q-tables / feature maps / datasets, and plot-data CSV.
//!
//! Numbers are written through Rust's shortest-round-trip decimal
//! formatting, so two runs of the same config produce byte-identical
//! artifacts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::fqi::{FqiRunRecord, IterationRow};
use crate::mdp::{TabularMdp, TransitionDataset};
use crate::soft_bellman::QTable;

pub const FILE_SCHEMA_VERSION: u32 = 1;

/// Fixed header of per-run CSV traces.
pub const RUN_CSV_HEADER: [&str; 7] =
    ["run_id", "k", "tau", "error_sq", "rho_k", "weight_err", "in_basin"];

/// Fixed header of plot-data CSV.
pub const PLOT_CSV_HEADER: [&str; 4] = ["iteration", "mean", "q25", "q75"];

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes one run trace as CSV, one row per iteration.
pub fn write_run_csv(path: &Path, run_id: &str, record: &FqiRunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_CSV_HEADER)?;
    for row in &record.rows {
        w.write_record([
            run_id.to_string(),
            row.k.to_string(),
            fmt(row.tau),
            fmt(row.error_sq()),
            row.rho.map(fmt).unwrap_or_default(),
            row.weight_err.map(fmt).unwrap_or_default(),
            row.in_basin.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the `error_sq` column of a run CSV (for independent
/// re-aggregation).
pub fn read_run_csv_errors(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == "error_sq")
        .ok_or_else(|| Error::InvalidConfig("run csv lacks error_sq column".into()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(idx)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("bad error_sq value: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses a full run CSV back into rows (trace inspection, tests).
pub fn read_run_csv(path: &Path) -> Result<Vec<IterationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad csv field {i}: {e}")))
        };
        let opt = |i: usize| -> Option<f64> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        out.push(IterationRow {
            k: rec
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad k: {e}")))?,
            tau: parse(2)?,
            error_mu_star: parse(3)?.sqrt(),
            rho: opt(4),
            weight_err: opt(5),
            in_basin: rec.get(6).unwrap_or("") == "true",
        });
    }
    Ok(out)
}

/// One aggregated plot row per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub iteration: usize,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PLOT_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            fmt(r.mean),
            fmt(r.q25),
            fmt(r.q75),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad plot csv field: {e}")))
        };
        out.push(PlotRow {
            iteration: rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad iteration: {e}")))?,
            mean: f(1)?,
            q25: f(2)?,
            q75: f(3)?,
        });
    }
    Ok(out)
}

/// Versioned JSON envelope around a serializable payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    payload: T,
}

fn save_json<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        schema_version: FILE_SCHEMA_VERSION,
        kind: kind.to_string(),
        payload,
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &env)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let env: Envelope<T> = serde_json::from_str(&text)?;
    if env.schema_version != FILE_SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported schema_version {} in {}",
            env.schema_version,
            path.display()
        )));
    }
    if env.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "expected kind {kind:?}, found {:?} in {}",
            env.kind,
            path.display()
        )));
    }
    Ok(env.payload)
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    save_json(path, "tabular_mdp", mdp)
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let mdp: TabularMdp = load_json(path, "tabular_mdp")?;
    mdp.validate()?;
    Ok(mdp)
}

pub fn save_qtable(path: &Path, q: &QTable) -> Result<()> {
    save_json(path, "q_table", q)
}

pub fn load_qtable(path: &Path) -> Result<QTable> {
    load_json(path, "q_table")
}

pub fn save_features(path: &Path, f: &FeatureMap) -> Result<()> {
    save_json(path, "feature_map", f)
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    load_json(path, "feature_map")
}

pub fn save_dataset(path: &Path, d: &TransitionDataset) -> Result<()> {
    save_json(path, "transition_dataset", d)
}

pub fn load_dataset(path: &Path) -> Result<TransitionDataset> {
    load_json(path, "transition_dataset")
}

pub fn save_json_value<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    save_json(path, kind, payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{generate_garnet, GarnetSpec};

    #[test]
    fn mdp_roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        let mdp = generate_garnet(&GarnetSpec {
            n_states: 8,
            n_actions: 3,
            branching: 4,
            reward_std: 0.1,
            discount: 0.95,
            seed: 5,
        })
        .unwrap();
        save_mdp(&path, &mdp).unwrap();
        let back = load_mdp(&path).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn run_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let record = FqiRunRecord {
            rows: vec![
                IterationRow {
                    k: 0,
                    tau: 0.5,
                    error_mu_star: 2.0,
                    rho: None,
                    weight_err: Some(0.0),
                    in_basin: false,
                },
                IterationRow {
                    k: 1,
                    tau: 0.5,
                    error_mu_star: 1.0,
                    rho: Some(0.5),
                    weight_err: None,
                    in_basin: true,
                },
            ],
            stage_boundaries: vec![0],
            target_errors: vec![2.0, 1.0],
            final_error: 1.0,
            diverged: false,
        };
        write_run_csv(&path, "test_run", &record).unwrap();
        let rows = read_run_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].k, 0);
        assert_eq!(rows[1].rho, Some(0.5));
        assert!(rows[1].in_basin);
        let errors = read_run_csv_errors(&path).unwrap();
        assert_eq!(errors, vec![4.0, 1.0]);
    }
}
