//! Goal-oriented adaptive loop.
//!
//! Primal and dual problems share the stiffness matrix and are iterated in
//! lockstep, each with its own stopping rule. Marking combines both Dörfler
//! sets, and the goal is evaluated with the duality correction
//! `G(u) + F(z) - a(u, z)`.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afem::{
    budget_reached, energy_diff, make_pcg, next_guess, write_records, write_records_to, AfemParams,
    Cost, Termination,
};
use crate::error::{AfemError, Result};
use crate::estimator::{dual_indicators, dual_problem, residual_indicators, Indicators};
use crate::fespace::{assemble, build_space, goal_vector, Space, SparseSystem};
use crate::linsolve::{direct_solve, Hierarchy};
use crate::marking::combined_mark;
use crate::mesh::Mesh;
use crate::problem::{GoalData, ProblemSpec};
use crate::sparse::dot;

/// One joint primal/dual step of a goal-oriented run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub ell: usize,
    pub k: usize,
    pub is_final: bool,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta: f64,
    pub increment: Option<f64>,
    pub alg_err: Option<f64>,
    pub err: Option<f64>,
    pub quasi_error: f64,
    pub cost_elems: u64,
    pub cost_dofs: u64,
    pub time_s: f64,
    pub solver_ops: u64,
    pub zeta: f64,
    pub dual_increment: Option<f64>,
    pub dual_alg_err: Option<f64>,
    pub eta_zeta: f64,
    /// Corrected goal `G(u) + F(z) - a(u, z)`.
    pub goal_value: f64,
    /// `|G_ref - goal_value|` when a reference value is known.
    pub goal_err: Option<f64>,
    /// Plain goal `G(u)` of the primal iterate.
    pub goal_plain: f64,
    pub goal_plain_err: Option<f64>,
}

pub const GOAL_COLUMNS: &[&str] = &[
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
    "zeta",
    "dual_increment",
    "dual_alg_err",
    "eta_zeta",
    "goal_value",
    "goal_err",
    "goal_plain",
    "goal_plain_err",
];

pub struct GoalTrace {
    pub problem: String,
    pub params: AfemParams,
    pub records: Vec<GoalRecord>,
    pub termination: Termination,
    pub mesh: Arc<Mesh>,
    pub space: Arc<Space>,
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    pub eta: Indicators,
    pub zeta: Indicators,
}

impl GoalTrace {
    pub fn finals(&self) -> Vec<&GoalRecord> {
        self.records.iter().filter(|r| r.is_final).collect()
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        write_records(&self.records, w)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        write_records_to(&self.records, path)
    }
}

/// Goal value with the duality correction, for full coefficient vectors `u`
/// (primal) and `z` (dual, homogeneous Dirichlet data).
pub fn corrected_goal(sys: &SparseSystem, g: &[f64], u: &[f64], z: &[f64]) -> f64 {
    let space = &sys.space;
    let uf = space.restrict(u);
    let zf = space.restrict(z);
    let au = sys.matrix.mul_vec(&uf);
    // F(z) - a(u, z) = z_f . (rhs - A u_f) since the free rhs already carries the lift
    let res: Vec<f64> = sys.rhs.iter().zip(&au).map(|(b, a)| b - a).collect();
    dot(g, u) + dot(&zf, &res)
}

struct Side<'a> {
    pcg: crate::linsolve::Pcg<'a>,
    state: crate::linsolve::SolverState,
    done: bool,
    exact: Option<Vec<f64>>,
}

pub fn run_goafem(mesh: Mesh, problem: &ProblemSpec, params: &AfemParams) -> Result<GoalTrace> {
    params.validate()?;
    problem.validate()?;
    let goal: GoalData = problem
        .goal
        .clone()
        .ok_or_else(|| AfemError::Problem("goal-oriented run needs a goal functional".into()))?;
    dual_problem(problem)?;
    let reference = goal.reference;
    let start = Instant::now();
    let mut mesh = Arc::new(mesh);
    let mut hier = Hierarchy::new(mesh.clone(), problem)?;
    let mut space = build_space(mesh.clone(), params.degree)?;
    let mut u = space.dirichlet_lift(problem.dirichlet.as_ref().map(|d| &*d.value as _));
    let mut z = vec![0.0; space.n_dofs()];
    let mut cost = Cost::default();
    let mut records = Vec::new();

    for ell in 0.. {
        let sys = assemble(&space, problem)?;
        let g = goal_vector(&space, &goal);
        let dual_sys = SparseSystem {
            space: space.clone(),
            matrix: sys.matrix.clone(),
            rhs: space.restrict(&g),
            lift: vec![0.0; space.n_dofs()],
            symmetric: true,
        };
        let mut sides = Vec::with_capacity(2);
        for (s, x) in [(&sys, &u), (&dual_sys, &z)] {
            let mut pcg = make_pcg(s, params.preconditioner, &hier)?;
            let state = pcg.start(space.restrict(x))?;
            let exact = if params.diagnostics {
                Some(direct_solve(s)?)
            } else {
                None
            };
            sides.push(Side {
                pcg,
                state,
                done: false,
                exact,
            });
        }
        let mut termination = None;
        let (mut ind_u, mut ind_z);
        let mut k = 0;
        loop {
            if k > 0 {
                for side in sides.iter_mut().filter(|s| !s.done) {
                    side.pcg.step(&mut side.state)?;
                }
            }
            u = sys.full(&sides[0].state.x);
            z = dual_sys.full(&sides[1].state.x);
            ind_u = residual_indicators(&space, &u, problem)?;
            ind_z = dual_indicators(&space, &z, problem)?;
            let (eta, zeta) = (ind_u.total(), ind_z.total());
            cost.add(&space);
            let inc = |s: &Side| (k > 0).then_some(s.state.increment);
            let (increment, dual_increment) = (inc(&sides[0]), inc(&sides[1]));
            if k > 0 {
                sides[0].done |= increment.unwrap() <= params.lambda_alg * eta;
                sides[1].done |= dual_increment.unwrap() <= params.lambda_alg * zeta;
            }
            if space.n_free() == 0 {
                sides[0].done = true;
                sides[1].done = true;
            }
            let alg = |s: &Side, sy: &SparseSystem| {
                s.exact.as_ref().map(|e| energy_diff(sy, e, &s.state.x))
            };
            let alg_err = alg(&sides[0], &sys);
            let goal_value = corrected_goal(&sys, &g, &u, &z);
            let goal_plain = dot(&g, &u);
            records.push(GoalRecord {
                ell,
                k,
                is_final: false,
                n_elements: mesh.n_elements(),
                n_dofs: space.n_free(),
                eta,
                increment,
                alg_err,
                err: None,
                quasi_error: crate::afem::quasi_error(None, alg_err, increment, eta),
                cost_elems: cost.elems,
                cost_dofs: cost.dofs,
                time_s: start.elapsed().as_secs_f64(),
                solver_ops: cost.ops + sides.iter().map(|s| s.state.total_ops).sum::<u64>(),
                zeta,
                dual_increment,
                dual_alg_err: alg(&sides[1], &dual_sys),
                eta_zeta: eta * zeta,
                goal_value,
                goal_err: reference.map(|r| (r - goal_value).abs()),
                goal_plain,
                goal_plain_err: reference.map(|r| (r - goal_plain).abs()),
            });
            if sides.iter().all(|s| s.done) {
                if (eta + increment.unwrap_or(0.0)) * (zeta + dual_increment.unwrap_or(0.0))
                    <= params.stop.tau
                {
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
        cost.ops += sides.iter().map(|s| s.state.total_ops).sum::<u64>();
        drop(sides);
        records.last_mut().unwrap().is_final = true;
        let product = |r: &GoalRecord| r.eta * r.zeta;
        let ratio = product(records.last().unwrap()) / product(&records[0]);
        let termination = termination
            .or_else(|| budget_reached(&params.stop, ell, space.n_free(), &cost, start, ratio));
        let marked = if termination.is_none() {
            combined_mark(&ind_u, &ind_z, params.theta)?
        } else {
            Vec::new()
        };
        let termination =
            termination.or_else(|| marked.is_empty().then_some(Termination::NothingMarked));
        if let Some(t) = termination {
            return Ok(GoalTrace {
                problem: problem.name.clone(),
                params: params.clone(),
                records,
                termination: t,
                mesh,
                space,
                primal: u,
                dual: z,
                eta: ind_u,
                zeta: ind_z,
            });
        }
        let fine = Arc::new(mesh.refine(&marked)?);
        hier.extend(fine.clone())?;
        let new_space = build_space(fine.clone(), params.degree)?;
        let lift = new_space.dirichlet_lift(problem.dirichlet.as_ref().map(|d| &*d.value as _));
        u = next_guess(&space, &new_space, &u, &lift, params.nested)?;
        z = next_guess(
            &space,
            &new_space,
            &z,
            &vec![0.0; new_space.n_dofs()],
            params.nested,
        )?;
        mesh = fine;
        space = new_space;
    }
    unreachable!()
}
