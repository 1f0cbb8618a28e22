use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One iterate `u_l^k` of an adaptive run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub ell: usize,
    pub k: usize,
    /// True for the last iterate of the level (the one used for marking).
    pub is_final: bool,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta: f64,
    /// `|||u^k - u^{k-1}|||`; empty for the first iterate of a level.
    pub increment: Option<f64>,
    /// `|||u_l^* - u_l^k|||` against a direct solve (diagnostics only).
    pub alg_err: Option<f64>,
    /// `|||u^* - u_l^k|||` for a known exact solution (diagnostics only).
    pub err: Option<f64>,
    /// `|||u* - u||| + eta`, with the best available proxy for the first term.
    pub quasi_error: f64,
    /// Cumulative sum of element counts over all iterates so far.
    pub cost_elems: u64,
    /// Cumulative sum of space dimensions over all iterates so far.
    pub cost_dofs: u64,
    /// Wall time since the start of the run.
    pub time_s: f64,
    /// Cumulative abstract work units of the algebraic solver.
    pub solver_ops: u64,
}

/// Quasi-error proxy: the exact error if known, else the algebraic error
/// against a direct solve, else the last increment; plus the estimator.
pub fn quasi_error(
    err: Option<f64>,
    alg_err: Option<f64>,
    increment: Option<f64>,
    eta: f64,
) -> f64 {
    err.or(alg_err).or(increment).unwrap_or(0.0) + eta
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `increment + eta <= tau`.
    Tolerance,
    MaxDofs,
    MaxCost,
    MaxLevels,
    MaxTime,
    /// The estimator dropped below the requested fraction of its initial value.
    EtaReduction,
    /// The algebraic solver reached its step cap on some level.
    SolverCap,
    /// Marking returned an empty set (all indicators vanish).
    NothingMarked,
    /// A stopping rule supplied by the caller.
    Custom,
}

pub(crate) fn write_records<T: Serialize, W: Write>(records: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub(crate) fn write_records_to<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_records(records, std::fs::File::create(path)?)
}

/// Reads records written by the trace writers.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rd.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Column names of a trace CSV.
pub const AFEM_COLUMNS: &[&str] = &[
    "ell",
    "k",
    "is_final",
    "n_elements",
    "n_dofs",
    "eta",
    "increment",
    "alg_err",
    "err",
    "quasi_error",
    "cost_elems",
    "cost_dofs",
    "time_s",
    "solver_ops",
];
