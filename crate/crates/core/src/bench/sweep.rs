//! Parameter sweeps over the marking and algebraic stopping parameters.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::run::{median, run_benchmark};
use super::{Algorithm, Benchmark};
use crate::error::Result;
use crate::iterlin::IterParams;

/// Default estimator reduction that ends each sweep run.
pub const SWEEP_REDUCTION: f64 = 1e-2;

#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub theta: f64,
    pub lambda: f64,
    /// Final estimator times the cumulative runtime.
    pub weighted_runtime: f64,
    pub eta: f64,
    /// Median wall time over the repetitions.
    pub time_s: f64,
    pub levels: usize,
    pub n_dofs: usize,
    /// False if a budget other than the estimator reduction ended the run.
    pub reached: bool,
}

/// Results on a `lambdas x thetas` grid (rows are `lambda`, columns `theta`).
#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cells: Vec<SweepCell>,
}

fn argmins(values: impl Iterator<Item = f64> + Clone) -> Vec<usize> {
    let m = values.clone().fold(f64::INFINITY, f64::min);
    values
        .enumerate()
        .filter(|(_, v)| *v == m)
        .map(|(i, _)| i)
        .collect()
}

impl SweepTable {
    pub fn cell(&self, row: usize, col: usize) -> &SweepCell {
        &self.cells[row * self.thetas.len() + col]
    }

    /// Column indices of the minimum in each row (ties give several).
    pub fn row_minima(&self) -> Vec<Vec<usize>> {
        (0..self.lambdas.len())
            .map(|r| argmins((0..self.thetas.len()).map(|c| self.cell(r, c).weighted_runtime)))
            .collect()
    }

    /// Row indices of the minimum in each column.
    pub fn col_minima(&self) -> Vec<Vec<usize>> {
        (0..self.thetas.len())
            .map(|c| argmins((0..self.lambdas.len()).map(|r| self.cell(r, c).weighted_runtime)))
            .collect()
    }

    /// Long-format CSV with one row per cell and minimum flags.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let rows = self.row_minima();
        let cols = self.col_minima();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "lambda",
            "theta",
            "weighted_runtime",
            "eta",
            "time_s",
            "levels",
            "n_dofs",
            "reached",
            "row_min",
            "col_min",
        ])?;
        for (r, lambda) in self.lambdas.iter().enumerate() {
            for (c, theta) in self.thetas.iter().enumerate() {
                let x = self.cell(r, c);
                wr.write_record([
                    lambda.to_string(),
                    theta.to_string(),
                    format!("{:e}", x.weighted_runtime),
                    format!("{:e}", x.eta),
                    format!("{:e}", x.time_s),
                    x.levels.to_string(),
                    x.n_dofs.to_string(),
                    x.reached.to_string(),
                    rows[r].contains(&c).to_string(),
                    cols[c].contains(&r).to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Plain-text grid; `*` marks row minima, `+` column minima.
    pub fn render(&self) -> String {
        let rows = self.row_minima();
        let cols = self.col_minima();
        let mut s = format!("{:>8}", "lambda");
        for t in &self.thetas {
            s += &format!(" {:>12}", format!("theta={t}"));
        }
        s.push('\n');
        for (r, l) in self.lambdas.iter().enumerate() {
            s += &format!("{l:>8}");
            for c in 0..self.thetas.len() {
                let mark = match (rows[r].contains(&c), cols[c].contains(&r)) {
                    (true, true) => "*+",
                    (true, false) => "* ",
                    (false, true) => " +",
                    _ => "  ",
                };
                s += &format!(" {:>10.4e}{mark}", self.cell(r, c).weighted_runtime);
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every `(lambda, theta)` cell in parallel. `base` supplies all other
/// parameters; its stopping criteria gain the estimator reduction `reduction`.
pub fn sweep(
    b: &Benchmark,
    alg: Algorithm,
    base: &IterParams,
    thetas: &[f64],
    lambdas: &[f64],
    reduction: f64,
    repeat: usize,
) -> Result<SweepTable> {
    let grid: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| thetas.iter().map(move |&t| (l, t)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(lambda, theta)| {
            let mut p = base.clone();
            p.afem.theta = theta;
            p.afem.lambda_alg = lambda;
            p.afem.stop.eta_reduction = Some(reduction);
            p.afem.diagnostics = false;
            let mut times = Vec::new();
            let mut summary = None;
            for _ in 0..repeat.max(1) {
                let out = run_benchmark(b, alg, &p)?;
                let s = out.summary();
                times.push(s.time_s);
                summary = Some(s);
            }
            let s = summary.unwrap();
            let time_s = median(&times);
            Ok(SweepCell {
                theta,
                lambda,
                weighted_runtime: s.final_estimate * time_s,
                eta: s.final_estimate,
                time_s,
                levels: s.levels,
                n_dofs: s.final_dofs,
                reached: s.termination == crate::afem::Termination::EtaReduction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        thetas: thetas.to_vec(),
        lambdas: lambdas.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(theta: f64, lambda: f64, w: f64) -> SweepCell {
        SweepCell {
            theta,
            lambda,
            weighted_runtime: w,
            eta: 1.0,
            time_s: w,
            levels: 1,
            n_dofs: 1,
            reached: true,
        }
    }

    #[test]
    fn minima_follow_rows_and_columns_with_ties() {
        let t = SweepTable {
            thetas: vec![0.1, 0.5],
            lambdas: vec![0.1, 0.9],
            cells: vec![
                cell(0.1, 0.1, 2.0),
                cell(0.5, 0.1, 1.0),
                cell(0.1, 0.9, 3.0),
                cell(0.5, 0.9, 3.0),
            ],
        };
        assert_eq!(t.row_minima(), vec![vec![1], vec![0, 1]]);
        assert_eq!(t.col_minima(), vec![vec![0], vec![0]]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(2).unwrap().ends_with("true,true"));
        assert!(t.render().contains("*+"));
    }

    #[test]
    fn small_sweep_stops_on_estimator_reduction() {
        let b = super::super::kellogg();
        let base = b.default_params(Algorithm::Afem);
        let t = sweep(&b, Algorithm::Afem, &base, &[0.5, 0.7], &[0.5], 0.3, 1).unwrap();
        assert_eq!(t.cells.len(), 2);
        assert!(t
            .cells
            .iter()
            .all(|c| c.reached && c.weighted_runtime > 0.0));
    }
}
