//! Adaptive loops with an outer iteration around the algebraic solver.
//!
//! The Zarantonello iteration turns a non-symmetric (or quasi-linear) problem
//! into a sequence of SPD problems for the principal part. The Kačanov
//! iteration freezes the nonlinear coefficient at the previous iterate. In both
//! cases the linear systems are only solved approximately by a few solver
//! steps, which gives iterates `u_l^{k,j}` indexed by level, outer step and
//! solver step.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afem::{
    budget_reached, make_pcg, next_guess, rate_fit, write_records, write_records_to, AfemParams,
    Cost, StopCriteria, Termination,
};
use crate::error::{AfemError, Result};
use crate::estimator::{residual_indicators, Indicators};
use crate::fespace::{
    assemble, assemble_energy, assemble_kacanov, build_space, energy_error,
    kacanov_energy_difference, load_vector, operator_apply, Space, SparseSystem,
};
use crate::linsolve::{direct_solve, solve_csr, Hierarchy};
use crate::marking::mark;
use crate::mesh::Mesh;
use crate::problem::{Nonlinearity, ProblemSpec};
use crate::sparse::CsrMatrix;

/// Outer iterations per level before giving up.
pub const MAX_OUTER_STEPS: usize = 1000;
/// Window of the Zarantonello divergence guard.
const GUARD_WINDOW: usize = 50;
/// Positive energy ratios below this floor count as zero.
const ALPHA_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterParams {
    /// Degree, marking, algebraic stopping parameter and budgets.
    pub afem: AfemParams,
    /// Zarantonello damping.
    pub delta: f64,
    /// Outer stopping parameter (`lambda_sym` or `lambda_lin`).
    pub lambda_outer: f64,
    /// Kačanov: initial lower bound on the energy ratio.
    pub alpha_min: f64,
    /// Kačanov: initial bound on the solver steps per outer step.
    pub j_max: usize,
    /// Kačanov: reduction of `alpha_min` when `j_max` grows.
    pub rho: f64,
    pub max_outer_steps: usize,
}

impl Default for IterParams {
    fn default() -> Self {
        IterParams::aisfem()
    }
}

impl IterParams {
    /// Zarantonello defaults: `delta = 0.1`, `lambda_sym = 0.1`, `lambda_alg = 0.7`, `theta = 0.3`.
    pub fn aisfem() -> Self {
        IterParams {
            afem: AfemParams {
                theta: 0.3,
                lambda_alg: 0.7,
                ..Default::default()
            },
            delta: 0.1,
            lambda_outer: 0.1,
            alpha_min: 100.0,
            j_max: 1,
            rho: 0.5,
            max_outer_steps: MAX_OUTER_STEPS,
        }
    }

    /// Kačanov defaults: `lambda_lin = 0.7`, `alpha_min = 100`, `J_max = 1`, `rho = 0.5`, `theta = 0.3`.
    pub fn ailfem() -> Self {
        IterParams {
            lambda_outer: 0.7,
            ..IterParams::aisfem()
        }
    }

    pub fn with_stop(mut self, stop: StopCriteria) -> Self {
        self.afem.stop = stop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.afem.validate()?;
        if !(self.delta > 0.0) {
            return Err(AfemError::Parameter(format!(
                "delta = {} must be positive",
                self.delta
            )));
        }
        if !(self.lambda_outer > 0.0) {
            return Err(AfemError::Parameter("lambda_outer must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(AfemError::Parameter(format!(
                "rho = {} outside (0, 1)",
                self.rho
            )));
        }
        if !(self.alpha_min > 0.0) || self.j_max == 0 || self.max_outer_steps == 0 {
            return Err(AfemError::Parameter(
                "alpha_min, j_max and max_outer_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One iterate `u_l^{k,j}`. Records are in lexicographic order of `(l, k, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub ell: usize,
    pub k: usize,
    pub j: usize,
    /// Last iterate of the level.
    pub is_final: bool,
    /// Last iterate of the outer step.
    pub is_outer_final: bool,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta: f64,
    /// `|||u^{k,j} - u^{k-1,j_}|||`.
    pub sym_increment: Option<f64>,
    /// `|||u^{k,j} - u^{k,j-1}|||`.
    pub alg_increment: Option<f64>,
    /// `|||u^{k,*} - u^{k,j}|||` against a direct solve of the linear system.
    pub alg_err: Option<f64>,
    /// `|||u_l^* - u^{k,j}|||` against the discrete solution.
    pub lin_err: Option<f64>,
    /// `|||u^* - u^{k,j}|||` for a known exact solution.
    pub err: Option<f64>,
    pub quasi_error: f64,
    pub cost_elems: u64,
    pub cost_dofs: u64,
    pub time_s: f64,
    pub solver_ops: u64,
    /// `E(u^{k,j})` for quasi-linear problems.
    pub energy: Option<f64>,
    /// `E(u^{k-1,j_}) - E(u^{k,j})`.
    pub dist2: Option<f64>,
    /// `dist2 / sym_increment^2`.
    pub alpha_ratio: Option<f64>,
    pub alpha_min: Option<f64>,
    #[serde(rename = "J_max")]
    pub j_max: Option<usize>,
}

pub const TRIPLE_COLUMNS: &[&str] = &[
    "ell",
    "k",
    "j",
    "is_final",
    "is_outer_final",
    "n_elements",
    "n_dofs",
    "eta",
    "sym_increment",
    "alg_increment",
    "alg_err",
    "lin_err",
    "err",
    "quasi_error",
    "cost_elems",
    "cost_dofs",
    "time_s",
    "solver_ops",
    "energy",
    "dist2",
    "alpha_ratio",
    "alpha_min",
    "J_max",
];

pub struct TripleTrace {
    pub problem: String,
    pub params: IterParams,
    pub records: Vec<TripleRecord>,
    pub termination: Termination,
    pub mesh: Arc<Mesh>,
    pub space: Arc<Space>,
    pub solution: Vec<f64>,
    pub indicators: Indicators,
    /// Largest number of solver steps in one outer step.
    pub max_j: usize,
    /// True if some solver loop stopped at the step cap instead of its criterion.
    pub inner_cap_hit: bool,
}

impl TripleTrace {
    pub fn finals(&self) -> Vec<&TripleRecord> {
        self.records.iter().filter(|r| r.is_final).collect()
    }

    /// Slope of `eta` against the cumulative DOF count over the final iterates.
    pub fn estimator_rate(&self, window: f64) -> Result<f64> {
        let f = self.finals();
        let x: Vec<f64> = f.iter().map(|r| r.cost_dofs as f64).collect();
        let y: Vec<f64> = f.iter().map(|r| r.eta).collect();
        rate_fit(&x, &y, window)
    }

    /// Outer steps per level.
    pub fn outer_steps(&self) -> Vec<usize> {
        self.finals().iter().map(|r| r.k).collect()
    }

    pub fn total_time(&self) -> f64 {
        self.records.last().map(|r| r.time_s).unwrap_or(0.0)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        write_records(&self.records, w)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        write_records_to(&self.records, path)
    }
}

fn a_norm(a: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
    a.quad_form(&d).max(0.0).sqrt()
}

fn lift_of(space: &Space, problem: &ProblemSpec) -> Vec<f64> {
    space.dirichlet_lift(problem.dirichlet.as_ref().map(|d| &*d.value as _))
}

/// Free part of `a(u, .) + delta [F - b(u, .)]`, with `a_ff` the energy matrix.
fn zarantonello_rhs(
    space: &Space,
    problem: &ProblemSpec,
    a_ff: &CsrMatrix,
    load: &[f64],
    u: &[f64],
    delta: f64,
) -> Vec<f64> {
    let bu = operator_apply(space, problem, u);
    let au = a_ff.mul_vec(&space.restrict(u));
    space
        .free_dofs()
        .iter()
        .zip(au)
        .map(|(&d, a)| a + delta * (load[d as usize] - bu[d as usize]))
        .collect()
}

/// SPD system `a(Phi, v) = a(u_prev, v) + delta [F(v) - b(u_prev, v)]` whose
/// solution is the Zarantonello update of `u_prev`.
pub fn zarantonello_step(
    space: &Arc<Space>,
    problem: &ProblemSpec,
    u_prev: &[f64],
    delta: f64,
) -> Result<SparseSystem> {
    problem.validate()?;
    if !(delta > 0.0) {
        return Err(AfemError::Parameter(format!(
            "delta = {delta} must be positive"
        )));
    }
    let matrix = assemble_energy(space, problem);
    let load = load_vector(space, problem.f.as_ref(), problem.f_vec.as_ref());
    let rhs = zarantonello_rhs(space, problem, &matrix, &load, u_prev, delta);
    Ok(SparseSystem {
        space: space.clone(),
        matrix,
        rhs,
        lift: lift_of(space, problem),
        symmetric: true,
    })
}

/// Kačanov system `<mu(|grad u_prev|^2) grad Phi, grad v> = F(v)`, after
/// checking that the frozen coefficient respects the growth bounds of `mu`.
pub fn kacanov_step(
    space: &Arc<Space>,
    problem: &ProblemSpec,
    u_prev: &[f64],
) -> Result<SparseSystem> {
    let mu = nonlinearity(problem)?;
    let (lo, hi) = (mu.alpha, mu.lipschitz / 3.0);
    let slack = 1e-12 * hi;
    let rule = space.rule();
    for t in 0..space.mesh().n_elements() {
        let g = space.geom(t);
        for l in &rule.points {
            let d = space.grad_at(u_prev, t, &g, *l);
            let m = (mu.mu)(d[0] * d[0] + d[1] * d[1]);
            if !(m >= lo - slack && m <= hi + slack) {
                return Err(AfemError::Problem(format!(
                    "mu = {m} outside the growth bounds [{lo}, {hi}] on element {t}"
                )));
            }
        }
    }
    assemble_kacanov(space, problem, u_prev)
}

fn nonlinearity(problem: &ProblemSpec) -> Result<&Nonlinearity> {
    problem
        .nonlinearity
        .as_ref()
        .ok_or_else(|| AfemError::Problem("problem has no nonlinearity".into()))
}

/// Energy `E(u) = 1/2 int int_0^{|grad u|^2} mu(t) dt - F(u)` of a quasi-linear problem.
pub fn energy(space: &Space, problem: &ProblemSpec, u: &[f64]) -> Result<f64> {
    let mu = nonlinearity(problem)?;
    let load = load_vector(space, problem.f.as_ref(), problem.f_vec.as_ref());
    let zero = vec![0.0; u.len()];
    Ok(kacanov_energy_difference(space, mu, &load, &zero, u))
}

/// Discrete solution `u_l^*`: a direct solve for linear problems, undamped
/// Kačanov (Picard) iteration with direct solves to `1e-12` otherwise.
pub fn discrete_solution(space: &Arc<Space>, problem: &ProblemSpec) -> Result<Vec<f64>> {
    if !problem.is_nonlinear() {
        let sys = assemble(space, problem)?;
        return Ok(sys.full(&direct_solve(&sys)?));
    }
    let a = assemble_energy(space, problem);
    let mut u = lift_of(space, problem);
    for _ in 0..500 {
        let sys = assemble_kacanov(space, problem, &u)?;
        let next = sys.full(&direct_solve(&sys)?);
        let (uf, nf) = (space.restrict(&u), space.restrict(&next));
        let inc = a_norm(&a, &nf, &uf);
        let size = a.quad_form(&nf).max(0.0).sqrt();
        u = next;
        if inc <= 1e-12 * size.max(1e-300) {
            return Ok(u);
        }
    }
    Err(AfemError::Divergence(
        "Kačanov iteration for the discrete solution did not reach 1e-12".into(),
    ))
}

/// Bookkeeping shared by both outer iterations.
struct Recorder<'a> {
    problem: &'a ProblemSpec,
    diagnostics: bool,
    start: Instant,
    cost: Cost,
    records: Vec<TripleRecord>,
}

/// Measured quantities of one iterate.
#[derive(Default)]
struct Measured {
    eta: f64,
    sym: Option<f64>,
    alg: Option<f64>,
    alg_err: Option<f64>,
    lin_err: Option<f64>,
    ops: u64,
}

impl Recorder<'_> {
    fn push(
        &mut self,
        space: &Space,
        u: &[f64],
        (ell, k, j): (usize, usize, usize),
        m: Measured,
    ) -> &mut TripleRecord {
        self.cost.add(space);
        let err = match (&self.problem.exact, self.diagnostics) {
            (Some(e), true) => Some(energy_error(space, self.problem, u, &*e.gradient)),
            _ => None,
        };
        let first = m.lin_err.or(m.sym).unwrap_or(0.0);
        let second = m.alg_err.or(m.alg).unwrap_or(0.0);
        self.records.push(TripleRecord {
            ell,
            k,
            j,
            is_final: false,
            is_outer_final: false,
            n_elements: space.mesh().n_elements(),
            n_dofs: space.n_free(),
            eta: m.eta,
            sym_increment: m.sym,
            alg_increment: m.alg,
            alg_err: m.alg_err,
            lin_err: m.lin_err,
            err,
            quasi_error: first + second + m.eta,
            cost_elems: self.cost.elems,
            cost_dofs: self.cost.dofs,
            time_s: self.start.elapsed().as_secs_f64(),
            solver_ops: self.cost.ops + m.ops,
            energy: None,
            dist2: None,
            alpha_ratio: None,
            alpha_min: None,
            j_max: None,
        });
        self.records.last_mut().unwrap()
    }

    fn close_outer(&mut self, ops: u64) {
        self.cost.ops += ops;
        let last = self.records.last_mut().unwrap();
        last.solver_ops = self.cost.ops;
        last.is_outer_final = true;
    }
}

/// Level state carried from one refinement to the next.
struct Level {
    mesh: Arc<Mesh>,
    hier: Hierarchy,
    space: Arc<Space>,
    u: Vec<f64>,
}

enum Next {
    Refined,
    Done(Termination, Indicators),
}

impl Level {
    fn new(mesh: Mesh, problem: &ProblemSpec, degree: usize) -> Result<Level> {
        let mesh = Arc::new(mesh);
        let hier = Hierarchy::new(mesh.clone(), problem)?;
        let space = build_space(mesh.clone(), degree)?;
        let u = lift_of(&space, problem);
        Ok(Level {
            mesh,
            hier,
            space,
            u,
        })
    }

    /// Budgets, marking and refinement after the outer loop of level `ell`.
    fn advance(
        &mut self,
        problem: &ProblemSpec,
        ap: &AfemParams,
        ell: usize,
        rec: &mut Recorder,
        termination: Option<Termination>,
        ind: Indicators,
    ) -> Result<Next> {
        rec.records.last_mut().unwrap().is_final = true;
        let n_dofs = self.space.n_free();
        let ratio = rec.records.last().unwrap().eta / rec.records[0].eta;
        let termination = termination
            .or_else(|| budget_reached(&ap.stop, ell, n_dofs, &rec.cost, rec.start, ratio));
        let marked = match termination {
            None => mark(&ind, ap.theta, ap.marking)?,
            Some(t) => return Ok(Next::Done(t, ind)),
        };
        if marked.is_empty() {
            return Ok(Next::Done(Termination::NothingMarked, ind));
        }
        let fine = Arc::new(self.mesh.refine(&marked)?);
        self.hier.extend(fine.clone())?;
        let space = build_space(fine.clone(), ap.degree)?;
        let lift = lift_of(&space, problem);
        self.u = next_guess(&self.space, &space, &self.u, &lift, ap.nested)?;
        self.mesh = fine;
        self.space = space;
        Ok(Next::Refined)
    }

    fn finish(
        self,
        problem: &ProblemSpec,
        params: &IterParams,
        rec: Recorder,
        termination: Termination,
        indicators: Indicators,
        (max_j, inner_cap_hit): (usize, bool),
    ) -> TripleTrace {
        TripleTrace {
            problem: problem.name.clone(),
            params: params.clone(),
            records: rec.records,
            termination,
            mesh: self.mesh,
            space: self.space,
            solution: self.u,
            indicators,
            max_j,
            inner_cap_hit,
        }
    }
}

/// Adaptive loop with the Zarantonello iteration
/// `a(Phi, v) = a(u, v) + delta [F(v) - b(u, v)]`, where `a` is the principal
/// (energy) part and `b` the full, possibly non-symmetric or quasi-linear, operator.
pub fn run_aisfem(mesh: Mesh, problem: &ProblemSpec, params: &IterParams) -> Result<TripleTrace> {
    params.validate()?;
    problem.validate()?;
    let ap = &params.afem;
    let mut rec = Recorder {
        problem,
        diagnostics: ap.diagnostics,
        start: Instant::now(),
        cost: Cost::default(),
        records: Vec::new(),
    };
    let mut lv = Level::new(mesh, problem, ap.degree)?;
    let (mut max_j, mut cap_hit) = (0, false);

    for ell in 0.. {
        let space = lv.space.clone();
        let base = SparseSystem {
            space: space.clone(),
            matrix: assemble_energy(&space, problem),
            rhs: vec![0.0; space.n_free()],
            lift: lift_of(&space, problem),
            symmetric: true,
        };
        let load = load_vector(&space, problem.f.as_ref(), problem.f_vec.as_ref());
        let u_star = if ap.diagnostics {
            Some(space.restrict(&discrete_solution(&space, problem)?))
        } else {
            None
        };
        let lin_err = |x: &[f64]| u_star.as_ref().map(|s| a_norm(&base.matrix, s, x));
        let mut pcg = make_pcg(&base, ap.preconditioner, &lv.hier)?;
        let mut ind = residual_indicators(&space, &lv.u, problem)?;
        let mut uf = space.restrict(&lv.u);
        let mut termination = None;
        let mut sym_history = Vec::new();
        rec.push(
            &space,
            &lv.u,
            (ell, 0, 0),
            Measured {
                eta: ind.total(),
                lin_err: lin_err(&uf),
                ..Default::default()
            },
        );
        let mut k = 0;
        while space.n_free() > 0 {
            k += 1;
            if k > params.max_outer_steps {
                log::warn!("outer step cap reached on level {ell}");
                termination = Some(Termination::SolverCap);
                break;
            }
            let rhs = zarantonello_rhs(&space, problem, &base.matrix, &load, &lv.u, params.delta);
            let target = if ap.diagnostics {
                Some(solve_csr(&base.matrix, &rhs, true)?)
            } else {
                None
            };
            let alg_err = |x: &[f64]| target.as_ref().map(|t| a_norm(&base.matrix, t, x));
            pcg.set_rhs(rhs)?;
            let prev = uf.clone();
            let mut state = pcg.start(prev.clone())?;
            rec.push(
                &space,
                &lv.u,
                (ell, k, 0),
                Measured {
                    eta: ind.total(),
                    sym: Some(0.0),
                    alg_err: alg_err(&state.x),
                    lin_err: lin_err(&state.x),
                    ops: state.total_ops,
                    ..Default::default()
                },
            );
            let mut j = 0;
            let sym = loop {
                j += 1;
                pcg.step(&mut state)?;
                lv.u = base.full(&state.x);
                ind = residual_indicators(&space, &lv.u, problem)?;
                let eta = ind.total();
                let inc = state.increment;
                let sym = a_norm(&base.matrix, &state.x, &prev);
                rec.push(
                    &space,
                    &lv.u,
                    (ell, k, j),
                    Measured {
                        eta,
                        sym: Some(sym),
                        alg: Some(inc),
                        alg_err: alg_err(&state.x),
                        lin_err: lin_err(&state.x),
                        ops: state.total_ops,
                    },
                );
                if inc <= ap.lambda_alg * (params.lambda_outer * eta + sym) {
                    break sym;
                }
                if j >= ap.max_solver_steps {
                    log::warn!("solver step cap reached on level {ell}, outer step {k}");
                    cap_hit = true;
                    break sym;
                }
            };
            max_j = max_j.max(j);
            rec.close_outer(state.total_ops);
            uf = state.x;
            sym_history.push(sym);
            if k > GUARD_WINDOW {
                let old = sym_history[k - 1 - GUARD_WINDOW];
                if sym > 10.0 * old {
                    return Err(AfemError::Divergence(format!(
                        "symmetrization increment grew from {old:.3e} to {sym:.3e} within \
                         {GUARD_WINDOW} steps on level {ell}: delta = {} is too large",
                        params.delta
                    )));
                }
            }
            let eta = ind.total();
            if sym + eta <= ap.stop.tau {
                termination = Some(Termination::Tolerance);
                break;
            }
            if sym <= params.lambda_outer * eta {
                break;
            }
        }
        drop(pcg);
        if let Next::Done(t, ind) = lv.advance(problem, ap, ell, &mut rec, termination, ind)? {
            return Ok(lv.finish(problem, params, rec, t, ind, (max_j, cap_hit)));
        }
    }
    unreachable!()
}

/// Adaptive loop with the Kačanov iteration
/// `<mu(|grad u|^2) grad Phi, grad v> = F(v)` and energy-based stopping rules.
pub fn run_ailfem(mesh: Mesh, problem: &ProblemSpec, params: &IterParams) -> Result<TripleTrace> {
    params.validate()?;
    problem.validate()?;
    let mu = nonlinearity(problem)?;
    let ap = &params.afem;
    if ap.degree != 1 {
        return Err(AfemError::Parameter(
            "the Kačanov loop supports p = 1 only".into(),
        ));
    }
    let mut rec = Recorder {
        problem,
        diagnostics: ap.diagnostics,
        start: Instant::now(),
        cost: Cost::default(),
        records: Vec::new(),
    };
    let mut lv = Level::new(mesh, problem, ap.degree)?;
    let (mut alpha_min, mut j_max) = (params.alpha_min, params.j_max);
    let (mut max_j, mut cap_hit) = (0, false);

    for ell in 0.. {
        let space = lv.space.clone();
        let energy_matrix = assemble_energy(&space, problem);
        let load = load_vector(&space, problem.f.as_ref(), problem.f_vec.as_ref());
        let zero = vec![0.0; space.n_dofs()];
        let energy_of = |u: &[f64]| kacanov_energy_difference(&space, mu, &load, &zero, u);
        let u_star = if ap.diagnostics {
            Some(space.restrict(&discrete_solution(&space, problem)?))
        } else {
            None
        };
        let lin_err = |x: &[f64]| u_star.as_ref().map(|s| a_norm(&energy_matrix, s, x));
        let mut ind = residual_indicators(&space, &lv.u, problem)?;
        let mut e = energy_of(&lv.u);
        let mut termination = None;
        let r = rec.push(
            &space,
            &lv.u,
            (ell, 0, 0),
            Measured {
                eta: ind.total(),
                lin_err: lin_err(&space.restrict(&lv.u)),
                ..Default::default()
            },
        );
        r.energy = Some(e);
        r.alpha_min = Some(alpha_min);
        r.j_max = Some(j_max);
        let mut k = 0;
        while space.n_free() > 0 {
            k += 1;
            if k > params.max_outer_steps {
                log::warn!("outer step cap reached on level {ell}");
                termination = Some(Termination::SolverCap);
                break;
            }
            let sys = kacanov_step(&space, problem, &lv.u)?;
            let target = if ap.diagnostics {
                Some(direct_solve(&sys)?)
            } else {
                None
            };
            let alg_err = |x: &[f64]| target.as_ref().map(|t| a_norm(&energy_matrix, t, x));
            let mut pcg = make_pcg(&sys, ap.preconditioner, &lv.hier)?;
            let u_prev = lv.u.clone();
            let e_prev = e;
            let prev = space.restrict(&u_prev);
            let mut state = pcg.start(prev.clone())?;
            let r = rec.push(
                &space,
                &lv.u,
                (ell, k, 0),
                Measured {
                    eta: ind.total(),
                    sym: Some(0.0),
                    alg_err: alg_err(&state.x),
                    lin_err: lin_err(&state.x),
                    ops: state.total_ops,
                    ..Default::default()
                },
            );
            r.energy = Some(e);
            r.dist2 = Some(0.0);
            r.alpha_min = Some(alpha_min);
            r.j_max = Some(j_max);
            let mut j = 0;
            let dist2 = loop {
                j += 1;
                pcg.step(&mut state)?;
                lv.u = sys.full(&state.x);
                ind = residual_indicators(&space, &lv.u, problem)?;
                let dist2 = kacanov_energy_difference(&space, mu, &load, &lv.u, &u_prev);
                let sym = a_norm(&energy_matrix, &state.x, &prev);
                let ratio = if sym > 0.0 { dist2 / (sym * sym) } else { 0.0 };
                e = energy_of(&lv.u);
                let r = rec.push(
                    &space,
                    &lv.u,
                    (ell, k, j),
                    Measured {
                        eta: ind.total(),
                        sym: Some(sym),
                        alg: Some(state.increment),
                        alg_err: alg_err(&state.x),
                        lin_err: lin_err(&state.x),
                        ops: state.total_ops,
                    },
                );
                r.energy = Some(e);
                r.dist2 = Some(dist2);
                r.alpha_ratio = Some(ratio);
                r.alpha_min = Some(alpha_min);
                r.j_max = Some(j_max);
                if ratio >= alpha_min || sym == 0.0 || (ratio > ALPHA_FLOOR && j > j_max) {
                    break dist2;
                }
                if j >= ap.max_solver_steps {
                    log::warn!("solver step cap reached on level {ell}, outer step {k}");
                    cap_hit = true;
                    break dist2;
                }
            };
            max_j = max_j.max(j);
            if j > j_max {
                j_max = j;
                alpha_min *= params.rho;
            }
            rec.close_outer(state.total_ops);
            if dist2 < -1e-10 * e_prev.abs().max(f64::MIN_POSITIVE) {
                return Err(AfemError::Divergence(format!(
                    "energy increased by {:.3e} in a linearization step on level {ell}",
                    -dist2
                )));
            }
            let eta = ind.total();
            if dist2.max(0.0).sqrt() + eta <= ap.stop.tau {
                termination = Some(Termination::Tolerance);
                break;
            }
            if dist2 <= params.lambda_outer * eta * eta {
                break;
            }
        }
        if let Next::Done(t, ind) = lv.advance(problem, ap, ell, &mut rec, termination, ind)? {
            return Ok(lv.finish(problem, params, rec, t, ind, (max_j, cap_hit)));
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{criss_cross, EdgeRule};
    use crate::problem::{ScalarField, VectorField};

    fn square() -> Mesh {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        Mesh::initial(&p, &t, &[], EdgeRule::LongestEdge).unwrap()
    }

    fn params(base: IterParams, levels: usize) -> IterParams {
        let mut p = base.with_stop(StopCriteria {
            max_levels: Some(levels),
            max_dofs: None,
            ..Default::default()
        });
        p.afem.theta = 0.5;
        p.afem.lambda_alg = 0.1;
        p.afem.diagnostics = true;
        p
    }

    fn benchmark_mu() -> Nonlinearity {
        Nonlinearity {
            mu: Arc::new(|t| 2.0 + (1.0 + t).powi(-2)),
            dmu: Arc::new(|t| -2.0 * (1.0 + t).powi(-3)),
            antiderivative: Some(Arc::new(|s| 2.0 * s - 1.0 / (1.0 + s) + 1.0)),
            alpha: 1.75,
            lipschitz: 9.0,
        }
    }

    fn quasi_linear() -> ProblemSpec {
        ProblemSpec::quasi_linear("q", benchmark_mu()).with_source(ScalarField::Constant(1.0))
    }

    #[test]
    fn zarantonello_runs_on_convection_problem() {
        let prob =
            ProblemSpec::poisson("c", 1.0).with_convection(VectorField::Constant([1.0, -2.0]));
        let tr = run_aisfem(square(), &prob, &params(IterParams::aisfem(), 4)).unwrap();
        assert_eq!(tr.finals().len(), 4);
        assert!(!tr.inner_cap_hit);
        for r in tr.records.iter().filter(|r| r.j == 0) {
            assert_eq!(r.alg_increment, None);
        }
        let keys: Vec<_> = tr.records.iter().map(|r| (r.ell, r.k, r.j)).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let last = tr.finals().last().unwrap().lin_err.unwrap();
        let eta = tr.finals().last().unwrap().eta;
        // the outer stop bounds the linearization error by q/(1-q) lambda eta
        assert!(last <= eta, "{last} > {eta}");
    }

    #[test]
    fn zarantonello_fixed_point_is_discrete_solution() {
        let prob =
            ProblemSpec::poisson("c", 1.0).with_convection(VectorField::Constant([3.0, 1.0]));
        let space = build_space(Arc::new(square().refine_uniform()), 1).unwrap();
        let u = discrete_solution(&space, &prob).unwrap();
        let sys = zarantonello_step(&space, &prob, &u, 0.3).unwrap();
        let phi = sys.full(&direct_solve(&sys).unwrap());
        let d = u
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
        assert!(zarantonello_step(&space, &prob, &u, 0.0).is_err());
    }

    #[test]
    fn kacanov_energy_decreases_on_each_level() {
        let tr = run_ailfem(square(), &quasi_linear(), &params(IterParams::ailfem(), 4)).unwrap();
        let finals: Vec<f64> = tr.finals().iter().map(|r| r.energy.unwrap()).collect();
        for w in finals.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "{finals:?}");
        }
        assert!(!tr.inner_cap_hit);
        assert!(tr.max_j <= 20);
    }

    #[test]
    fn kacanov_rejects_growth_violation_and_higher_degree() {
        let mut mu = benchmark_mu();
        mu.lipschitz = 6.0;
        let prob = ProblemSpec::quasi_linear("q", mu).with_source(ScalarField::Constant(1.0));
        let space = build_space(Arc::new(square()), 1).unwrap();
        // mu(0) = 3 exceeds L/3 = 2
        assert!(kacanov_step(&space, &prob, &vec![0.0; space.n_dofs()]).is_err());
        let mut p = IterParams::ailfem();
        p.afem.degree = 2;
        assert!(run_ailfem(square(), &quasi_linear(), &p).is_err());
    }

    #[test]
    fn energy_of_zero_vanishes() {
        let space = build_space(Arc::new(square()), 1).unwrap();
        let zero = vec![0.0; space.n_dofs()];
        assert_eq!(energy(&space, &quasi_linear(), &zero).unwrap(), 0.0);
        assert!(energy(&space, &ProblemSpec::poisson("p", 1.0), &zero).is_err());
    }
}
