//! Benchmark registry, parameter sweeps and the command-line front end.

pub mod cli;
mod problems;
mod run;
mod sweep;
pub mod verify;

pub use problems::*;
pub use run::{
    median, run_benchmark, thread_count, with_threads, RunManifest, RunOutput, RunSummary,
};
pub use sweep::{sweep, SweepCell, SweepTable, SWEEP_REDUCTION};

use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::mesh::Mesh;
use crate::problem::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Adaptive loop with a contractive solver for symmetric problems.
    Afem,
    /// Goal-oriented loop with primal and dual solves.
    Goafem,
    /// Zarantonello symmetrization for non-symmetric problems.
    Aisfem,
    /// Kačanov linearization for quasi-linear problems.
    Ailfem,
    /// Zarantonello linearization for quasi-linear problems.
    Zarantonello,
}

/// A registered benchmark: initial mesh, problem and the algorithm it is meant for.
pub struct Benchmark {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    mesh: fn() -> Result<Mesh>,
}

impl Benchmark {
    /// A fresh initial mesh with its own refinement lineage.
    pub fn initial_mesh(&self) -> Result<Mesh> {
        (self.mesh)()
    }

    /// Optimal estimator rate against cumulative DOFs for degree `p`.
    pub fn expected_rate(&self, p: usize) -> f64 {
        match self.algorithm {
            Algorithm::Goafem => -(p as f64),
            _ => -(p as f64) / 2.0,
        }
    }

    pub fn goal_reference(&self) -> Option<f64> {
        self.problem.goal.as_ref().and_then(|g| g.reference)
    }
}

pub const BENCHMARKS: &[&str] = &["kellogg", "zshape", "lshape_convection", "lshape_nonlinear"];

pub fn kellogg() -> Benchmark {
    Benchmark {
        name: "kellogg",
        description:
            "interface problem with a coefficient jump and a point singularity on (-1,1)^2",
        problem: kellogg_problem(),
        algorithm: Algorithm::Afem,
        mesh: kellogg_mesh,
    }
}

pub fn zshape_goal() -> Benchmark {
    Benchmark {
        name: "zshape",
        description: "Poisson problem on a Z-shaped domain with a gradient goal functional",
        problem: zshape_problem(),
        algorithm: Algorithm::Goafem,
        mesh: zshape_mesh,
    }
}

pub fn lshape_convection() -> Benchmark {
    Benchmark {
        name: "lshape_convection",
        description: "convection-dominated problem on the L-shape, b = (-10,-10)",
        problem: lshape_convection_problem(),
        algorithm: Algorithm::Aisfem,
        mesh: lshape_mesh,
    }
}

pub fn lshape_nonlinear() -> Benchmark {
    Benchmark {
        name: "lshape_nonlinear",
        description: "quasi-linear problem on the L-shape with mu(t) = 2 + (1+t)^-2",
        problem: lshape_nonlinear_problem(),
        algorithm: Algorithm::Ailfem,
        mesh: lshape_mesh,
    }
}

pub fn benchmark(name: &str) -> Result<Benchmark> {
    match name {
        "kellogg" => Ok(kellogg()),
        "zshape" | "zshape_goal" => Ok(zshape_goal()),
        "lshape_convection" => Ok(lshape_convection()),
        "lshape_nonlinear" => Ok(lshape_nonlinear()),
        _ => Err(AfemError::Parameter(format!(
            "unknown benchmark '{name}' (known: {})",
            BENCHMARKS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique_and_resolve() {
        let mut names: Vec<&str> = BENCHMARKS.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), BENCHMARKS.len());
        for n in BENCHMARKS {
            let b = benchmark(n).unwrap();
            assert_eq!(b.name, *n);
            b.initial_mesh().unwrap();
            b.problem.validate().unwrap();
        }
        assert!(benchmark("nope").is_err());
    }
}
