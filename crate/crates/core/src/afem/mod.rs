//! Adaptive loop with an inexact contractive solver.
//!
//! On each mesh the solver is stepped until its energy increment drops below
//! `lambda_alg` times the estimator, then the final iterate is marked, the mesh
//! refined and the iterate prolongated as the next initial guess.

mod analysis;
mod trace;

pub use analysis::{check_full_rlinear, rate_fit, RLinearReport};
pub use trace::{quasi_error, read_records, StepRecord, Termination, AFEM_COLUMNS};
pub(crate) use trace::{write_records, write_records_to};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};
use crate::estimator::{residual_indicators, Indicators};
use crate::fespace::{assemble, build_space, energy_error, prolongate, Space, SparseSystem};
use crate::linsolve::{direct_solve, Hierarchy, Pcg, Preconditioner};
use crate::marking::{mark, MarkingStrategy};
use crate::mesh::Mesh;
use crate::problem::ProblemSpec;

/// Hard cap on solver steps per level.
pub const MAX_SOLVER_STEPS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    /// Multiplicative local V-cycle.
    #[default]
    Multilevel,
    /// Additive local multilevel (BPX-type).
    Additive,
    Jacobi,
    Identity,
    Exact,
}

/// Budgets and tolerances that end a run. The first one reached wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    /// Stop once `increment + eta <= tau`.
    pub tau: f64,
    /// Stop after the first level whose space has at least this many DOFs.
    pub max_dofs: Option<usize>,
    /// Stop once the cumulative DOF count reaches this value.
    pub max_cost: Option<u64>,
    pub max_levels: Option<usize>,
    pub max_time_s: Option<f64>,
    /// Stop once the final estimator of a level drops below this fraction of
    /// the estimator of the very first iterate.
    pub eta_reduction: Option<f64>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            tau: 0.0,
            max_dofs: Some(100_000),
            max_cost: None,
            max_levels: None,
            max_time_s: None,
            eta_reduction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfemParams {
    pub degree: usize,
    pub theta: f64,
    pub lambda_alg: f64,
    pub marking: MarkingStrategy,
    pub stop: StopCriteria,
    /// Start each level from the prolongated previous iterate (otherwise from zero).
    pub nested: bool,
    /// Record algebraic and total errors against direct solves and exact solutions.
    pub diagnostics: bool,
    pub preconditioner: PrecondKind,
    pub max_solver_steps: usize,
}

impl Default for AfemParams {
    fn default() -> Self {
        AfemParams {
            degree: 1,
            theta: 0.5,
            lambda_alg: 0.01,
            marking: MarkingStrategy::default(),
            stop: StopCriteria::default(),
            nested: true,
            diagnostics: false,
            preconditioner: PrecondKind::default(),
            max_solver_steps: MAX_SOLVER_STEPS,
        }
    }
}

impl AfemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(AfemError::Parameter(format!(
                "theta = {} outside (0, 1]",
                self.theta
            )));
        }
        if !(self.lambda_alg > 0.0) {
            return Err(AfemError::Parameter(format!(
                "lambda_alg = {} must be positive",
                self.lambda_alg
            )));
        }
        if self.degree != 1 && self.degree != 2 {
            return Err(AfemError::Parameter(format!(
                "degree {} is not supported",
                self.degree
            )));
        }
        if self.max_solver_steps == 0 {
            return Err(AfemError::Parameter(
                "max_solver_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything produced by an adaptive run.
pub struct AdaptiveTrace {
    pub problem: String,
    pub params: AfemParams,
    pub records: Vec<StepRecord>,
    pub termination: Termination,
    pub mesh: Arc<Mesh>,
    pub space: Arc<Space>,
    /// Final iterate as a full coefficient vector.
    pub solution: Vec<f64>,
    pub indicators: Indicators,
}

impl AdaptiveTrace {
    /// Records of the final iterate of each level.
    pub fn finals(&self) -> Vec<&StepRecord> {
        self.records.iter().filter(|r| r.is_final).collect()
    }

    /// Slope of `eta` over cumulative DOFs at the final iterates.
    pub fn estimator_rate(&self, window: f64) -> Result<f64> {
        let f = self.finals();
        let x: Vec<f64> = f.iter().map(|r| r.cost_dofs as f64).collect();
        let y: Vec<f64> = f.iter().map(|r| r.eta).collect();
        rate_fit(&x, &y, window)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        write_records(&self.records, w)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        write_records_to(&self.records, path)
    }

    pub fn total_time(&self) -> f64 {
        self.records.last().map(|r| r.time_s).unwrap_or(0.0)
    }
}

/// Cumulative counters shared by the drivers.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Cost {
    pub elems: u64,
    pub dofs: u64,
    pub ops: u64,
}

impl Cost {
    pub fn add(&mut self, space: &Space) {
        self.elems += space.mesh().n_elements() as u64;
        self.dofs += space.n_free() as u64;
    }
}

pub(crate) fn make_pcg<'a>(
    sys: &'a SparseSystem,
    kind: PrecondKind,
    h: &'a Hierarchy,
) -> Result<Pcg<'a>> {
    Pcg::new(
        sys,
        match kind {
            PrecondKind::Multilevel => Preconditioner::Multilevel(h),
            PrecondKind::Additive => Preconditioner::Additive(h),
            PrecondKind::Jacobi => Preconditioner::Jacobi,
            PrecondKind::Identity => Preconditioner::Identity,
            PrecondKind::Exact => Preconditioner::Exact,
        },
    )
}

/// Energy norm of a difference of free vectors.
pub(crate) fn energy_diff(sys: &SparseSystem, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    sys.matrix.quad_form(&d).max(0.0).sqrt()
}

/// Initial guess on a new level: prolongation of the previous iterate with
/// the Dirichlet values reset to the new nodal interpolant.
pub(crate) fn next_guess(
    old: &Space,
    new: &Space,
    u: &[f64],
    lift: &[f64],
    nested: bool,
) -> Result<Vec<f64>> {
    if !nested {
        return Ok(lift.to_vec());
    }
    let mut g = prolongate(old, new, u)?;
    for d in 0..new.n_dofs() {
        if new.free_index(d).is_none() {
            g[d] = lift[d];
        }
    }
    Ok(g)
}

/// Checks the level budgets; `None` means continue. `eta_ratio` is the
/// current estimator relative to the first one.
pub(crate) fn budget_reached(
    stop: &StopCriteria,
    ell: usize,
    n_dofs: usize,
    cost: &Cost,
    start: Instant,
    eta_ratio: f64,
) -> Option<Termination> {
    if stop.eta_reduction.is_some_and(|r| eta_ratio < r) {
        return Some(Termination::EtaReduction);
    }
    if stop.max_dofs.is_some_and(|m| n_dofs >= m) {
        return Some(Termination::MaxDofs);
    }
    if stop.max_cost.is_some_and(|m| cost.dofs >= m) {
        return Some(Termination::MaxCost);
    }
    if stop.max_levels.is_some_and(|m| ell + 1 >= m) {
        return Some(Termination::MaxLevels);
    }
    if stop
        .max_time_s
        .is_some_and(|m| start.elapsed().as_secs_f64() >= m)
    {
        return Some(Termination::MaxTime);
    }
    None
}

/// Runs the adaptive algorithm from `mesh` until a stopping criterion holds.
pub fn run_afem(mesh: Mesh, problem: &ProblemSpec, params: &AfemParams) -> Result<AdaptiveTrace> {
    run_afem_with(mesh, problem, params, |_| false)
}

/// Like [`run_afem`], with an extra stopping rule evaluated on every final iterate.
pub fn run_afem_with(
    mesh: Mesh,
    problem: &ProblemSpec,
    params: &AfemParams,
    mut stop_when: impl FnMut(&[StepRecord]) -> bool,
) -> Result<AdaptiveTrace> {
    params.validate()?;
    problem.validate()?;
    if problem.is_nonlinear() || !problem.is_symmetric() {
        return Err(AfemError::Problem(
            "the plain adaptive loop needs a linear symmetric problem; use the iterative linearization drivers".into(),
        ));
    }
    let start = Instant::now();
    let mut mesh = Arc::new(mesh);
    let mut hier = Hierarchy::new(mesh.clone(), problem)?;
    let mut space = build_space(mesh.clone(), params.degree)?;
    let mut sys = assemble(&space, problem)?;
    let mut u = sys.lift.clone();
    let mut cost = Cost::default();
    let mut records: Vec<StepRecord> = Vec::new();
    let exact_grad = problem.exact.as_ref().map(|e| e.gradient.clone());

    for ell in 0.. {
        let mut pcg = make_pcg(&sys, params.preconditioner, &hier)?;
        let mut state = pcg.start(space.restrict(&u))?;
        let u_star = if params.diagnostics {
            Some(direct_solve(&sys)?)
        } else {
            None
        };
        let diag = |x: &[f64], full: &[f64]| -> (Option<f64>, Option<f64>) {
            let alg = u_star.as_ref().map(|s| energy_diff(&sys, s, x));
            let err = if params.diagnostics {
                exact_grad
                    .as_ref()
                    .map(|g| energy_error(&space, problem, full, &**g))
            } else {
                None
            };
            (alg, err)
        };
        let mut termination = None;
        let mut k = 0;
        let mut ind;
        loop {
            if k > 0 {
                pcg.step(&mut state)?;
            }
            u = sys.full(&state.x);
            ind = residual_indicators(&space, &u, problem)?;
            let eta = ind.total();
            cost.add(&space);
            let (alg_err, err) = diag(&state.x, &u);
            let increment = (k > 0).then_some(state.increment);
            records.push(StepRecord {
                ell,
                k,
                is_final: false,
                n_elements: mesh.n_elements(),
                n_dofs: space.n_free(),
                eta,
                increment,
                alg_err,
                err,
                quasi_error: quasi_error(err, alg_err, increment, eta),
                cost_elems: cost.elems,
                cost_dofs: cost.dofs,
                time_s: start.elapsed().as_secs_f64(),
                solver_ops: cost.ops + state.total_ops,
            });
            if let Some(inc) = increment {
                if inc + eta <= params.stop.tau {
                    termination = Some(Termination::Tolerance);
                    break;
                }
                if inc <= params.lambda_alg * eta {
                    break;
                }
            }
            if space.n_free() == 0 && k == 0 {
                // nothing to solve: the lifted data is the discrete solution
                if eta <= params.stop.tau {
                    termination = Some(Termination::Tolerance);
                }
                break;
            }
            if k >= params.max_solver_steps {
                log::warn!(
                    "solver step cap {} reached on level {ell}",
                    params.max_solver_steps
                );
                termination = Some(Termination::SolverCap);
                break;
            }
            k += 1;
        }
        cost.ops += state.total_ops;
        records.last_mut().unwrap().is_final = true;
        let n_dofs = space.n_free();
        let termination = termination
            .or_else(|| stop_when(&records).then_some(Termination::Custom))
            .or_else(|| {
                let ratio = records.last().unwrap().eta / records[0].eta;
                budget_reached(&params.stop, ell, n_dofs, &cost, start, ratio)
            });
        let marked = if termination.is_none() {
            mark(&ind, params.theta, params.marking)?
        } else {
            Vec::new()
        };
        let termination =
            termination.or_else(|| marked.is_empty().then_some(Termination::NothingMarked));
        if let Some(t) = termination {
            drop(pcg);
            return Ok(AdaptiveTrace {
                problem: problem.name.clone(),
                params: params.clone(),
                records,
                termination: t,
                mesh,
                space,
                solution: u,
                indicators: ind,
            });
        }
        drop(pcg);
        let fine = Arc::new(mesh.refine(&marked)?);
        hier.extend(fine.clone())?;
        let new_space = build_space(fine.clone(), params.degree)?;
        let new_sys = assemble(&new_space, problem)?;
        u = next_guess(&space, &new_space, &u, &new_sys.lift, params.nested)?;
        mesh = fine;
        space = new_space;
        sys = new_sys;
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{criss_cross, EdgeRule};
    use crate::problem::{DirichletData, ExactSolution};

    #[test]
    fn discrete_solution_in_space_stops_at_tolerance() {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        let mesh = Mesh::initial(&p, &t, &[], EdgeRule::LongestEdge).unwrap();
        let prob = ProblemSpec::poisson("linear", 0.0)
            .with_dirichlet(DirichletData {
                value: Arc::new(|x| x[0] + 2.0 * x[1]),
                gradient: None,
            })
            .with_exact(ExactSolution {
                value: Arc::new(|x| x[0] + 2.0 * x[1]),
                gradient: Arc::new(|_| [1.0, 2.0]),
            });
        let params = AfemParams {
            stop: StopCriteria {
                tau: 1e-10,
                ..Default::default()
            },
            diagnostics: true,
            ..Default::default()
        };
        let tr = run_afem(mesh, &prob, &params).unwrap();
        assert_eq!(tr.termination, Termination::Tolerance);
        assert_eq!(tr.records.last().unwrap().ell, 0);
        assert!(tr.records.last().unwrap().eta < 1e-10);
    }

    #[test]
    fn costs_accumulate() {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        let mesh = Mesh::initial(&p, &t, &[], EdgeRule::LongestEdge).unwrap();
        let prob = ProblemSpec::poisson("p", 1.0);
        let params = AfemParams {
            stop: StopCriteria {
                max_levels: Some(4),
                max_dofs: None,
                ..Default::default()
            },
            ..Default::default()
        };
        let tr = run_afem(mesh, &prob, &params).unwrap();
        assert_eq!(tr.termination, Termination::MaxLevels);
        let mut e = 0;
        for r in &tr.records {
            e += r.n_elements as u64;
            assert_eq!(r.cost_elems, e);
        }
        assert_eq!(tr.finals().len(), 4);
    }
}
