//! Running registered benchmarks with any of the drivers.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use super::{Algorithm, Benchmark};
use crate::afem::{rate_fit, run_afem, AdaptiveTrace, AfemParams, Termination};
use crate::error::{AfemError, Result};
use crate::estimator::Indicators;
use crate::goafem::{run_goafem, GoalTrace};
use crate::iterlin::{run_ailfem, run_aisfem, IterParams, TripleTrace};
use crate::mesh::Mesh;

/// Thread count for parallel work, from `AFEMKIT_THREADS` if set.
pub fn thread_count() -> usize {
    std::env::var("AFEMKIT_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Runs `f` inside a rayon pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AfemError::Parameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

impl Benchmark {
    /// Parameters of the published experiment for `alg` on this benchmark.
    pub fn default_params(&self, alg: Algorithm) -> IterParams {
        let mut p = match alg {
            Algorithm::Afem => IterParams {
                afem: AfemParams::default(),
                ..IterParams::aisfem()
            },
            Algorithm::Goafem => {
                let mut p = IterParams::aisfem();
                p.afem.lambda_alg = 0.7;
                p
            }
            Algorithm::Aisfem => {
                let mut p = IterParams::aisfem();
                p.afem.lambda_alg = 0.1;
                p
            }
            Algorithm::Ailfem => IterParams::ailfem(),
            Algorithm::Zarantonello => IterParams {
                delta: 1.0 / 3.0,
                ..IterParams::aisfem()
            },
        };
        p.afem.stop.max_dofs = Some(100_000);
        p
    }
}

/// Trace of any driver.
pub enum RunOutput {
    Afem(AdaptiveTrace),
    Goal(GoalTrace),
    Triple(TripleTrace),
}

impl RunOutput {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        match self {
            RunOutput::Afem(t) => t.write_csv(w),
            RunOutput::Goal(t) => t.write_csv(w),
            RunOutput::Triple(t) => t.write_csv(w),
        }
    }

    pub fn termination(&self) -> Termination {
        match self {
            RunOutput::Afem(t) => t.termination,
            RunOutput::Goal(t) => t.termination,
            RunOutput::Triple(t) => t.termination,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        match self {
            RunOutput::Afem(t) => &t.mesh,
            RunOutput::Goal(t) => &t.mesh,
            RunOutput::Triple(t) => &t.mesh,
        }
    }

    /// Refinement indicators of the last level.
    pub fn indicators(&self) -> &Indicators {
        match self {
            RunOutput::Afem(t) => &t.indicators,
            RunOutput::Goal(t) => &t.eta,
            RunOutput::Triple(t) => &t.indicators,
        }
    }

    /// `(cumulative DOFs, error quantity)` of the final iterates: `eta`, or
    /// `eta * zeta` for goal-oriented runs.
    pub fn rate_series(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            RunOutput::Afem(t) => t
                .finals()
                .iter()
                .map(|r| (r.cost_dofs as f64, r.eta))
                .unzip(),
            RunOutput::Goal(t) => t
                .finals()
                .iter()
                .map(|r| (r.cost_dofs as f64, r.eta_zeta))
                .unzip(),
            RunOutput::Triple(t) => t
                .finals()
                .iter()
                .map(|r| (r.cost_dofs as f64, r.eta))
                .unzip(),
        }
    }

    pub fn rate(&self, window: f64) -> Result<f64> {
        let (x, y) = self.rate_series();
        rate_fit(&x, &y, window)
    }

    /// Number of levels, final free DOFs, final estimator and wall time.
    pub fn summary(&self) -> RunSummary {
        let (x, y) = self.rate_series();
        let (levels, dofs, time) = match self {
            RunOutput::Afem(t) => (t.finals().len(), t.space.n_free(), t.total_time()),
            RunOutput::Goal(t) => (
                t.finals().len(),
                t.space.n_free(),
                t.records.last().map(|r| r.time_s).unwrap_or(0.0),
            ),
            RunOutput::Triple(t) => (t.finals().len(), t.space.n_free(), t.total_time()),
        };
        RunSummary {
            termination: self.termination(),
            levels,
            final_dofs: dofs,
            final_cost_dofs: x.last().copied().unwrap_or(0.0) as u64,
            final_estimate: y.last().copied().unwrap_or(f64::NAN),
            time_s: time,
        }
    }

    /// Writes `element,eta2,cx,cy` for the final mesh.
    pub fn dump_indicators(&self, mut w: impl Write) -> Result<()> {
        let mesh = self.mesh();
        let ind = self.indicators();
        writeln!(w, "element,eta2,cx,cy")?;
        for (t, v) in ind.values.iter().enumerate() {
            let c = mesh.corners(t);
            let cx = (c[0][0] + c[1][0] + c[2][0]) / 3.0;
            let cy = (c[0][1] + c[1][1] + c[2][1]) / 3.0;
            writeln!(w, "{t},{v:e},{cx},{cy}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub levels: usize,
    pub final_dofs: usize,
    pub final_cost_dofs: u64,
    pub final_estimate: f64,
    pub time_s: f64,
}

/// Runs `alg` on benchmark `b` from its initial mesh.
pub fn run_benchmark(b: &Benchmark, alg: Algorithm, params: &IterParams) -> Result<RunOutput> {
    let mesh = b.initial_mesh()?;
    let prob = &b.problem;
    match alg {
        Algorithm::Afem => Ok(RunOutput::Afem(run_afem(mesh, prob, &params.afem)?)),
        Algorithm::Goafem => Ok(RunOutput::Goal(run_goafem(mesh, prob, &params.afem)?)),
        Algorithm::Aisfem | Algorithm::Zarantonello => {
            Ok(RunOutput::Triple(run_aisfem(mesh, prob, params)?))
        }
        Algorithm::Ailfem => Ok(RunOutput::Triple(run_ailfem(mesh, prob, params)?)),
    }
}

/// JSON record of one CLI invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub benchmark: String,
    pub algorithm: Algorithm,
    pub initial_mesh: String,
    pub params: IterParams,
    pub threads: usize,
    pub repeat: usize,
    pub run_times_s: Vec<f64>,
    /// Median over the repeated runs.
    pub median_time_s: f64,
    pub summary: RunSummary,
    pub rate: Option<f64>,
    pub expected_rate: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)
            .map_err(|e| AfemError::Parse(format!("manifest: {e}")))
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{benchmark, BENCHMARKS};

    #[test]
    fn median_of_odd_and_even_samples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn every_benchmark_runs_a_few_levels() {
        for name in BENCHMARKS {
            let b = benchmark(name).unwrap();
            let mut p = b.default_params(b.algorithm);
            p.afem.stop.max_levels = Some(3);
            let out = run_benchmark(&b, b.algorithm, &p).unwrap();
            let s = out.summary();
            assert_eq!(s.levels, 3, "{name}");
            assert_eq!(s.termination, Termination::MaxLevels);
            let mut buf = Vec::new();
            out.dump_indicators(&mut buf).unwrap();
            let lines = String::from_utf8(buf).unwrap().lines().count();
            assert_eq!(lines, out.mesh().n_elements() + 1);
        }
    }
}
