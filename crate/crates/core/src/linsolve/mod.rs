//! Contractive algebraic solvers: preconditioned conjugate gradients with an
//! additive multilevel preconditioner, plus direct solves for oracles.

mod direct;
mod hierarchy;

pub use direct::{direct_solve, solve_csr, DenseCholesky};
pub use hierarchy::{Hierarchy, HierarchyWork};

use crate::error::{AfemError, Result};
use crate::fespace::SparseSystem;
use crate::sparse::dot;

/// Preconditioner choice for [`Pcg`].
pub enum Preconditioner<'a> {
    Identity,
    Jacobi,
    /// Multiplicative V-cycle on a hierarchy whose finest mesh is the mesh of the system.
    Multilevel(&'a Hierarchy),
    /// Additive multilevel (BPX-type) variant on the same hierarchy.
    Additive(&'a Hierarchy),
    /// Exact inverse through a direct factorization (for testing).
    Exact,
}

enum Prepared<'a> {
    Identity,
    Jacobi(Vec<f64>),
    Multilevel {
        h: &'a Hierarchy,
        cycle: bool,
        /// Global vertex ids of the P1 vertices in free-DOF order
        /// (`u32::MAX` for non-vertex DOFs).
        vertex_of: Vec<u32>,
        /// For degree two: endpoints of the edge DOF in free-DOF order.
        edge_of: Vec<[u32; 2]>,
        inv_diag: Vec<f64>,
        work: HierarchyWork,
        rg: Vec<f64>,
        zg: Vec<f64>,
    },
    Exact,
}

/// Iterate of the solver together with the CG recurrences.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// Current iterate on the free DOFs.
    pub x: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    rz: f64,
    /// Energy norm of the last update `|||x_k - x_{k-1}|||`.
    pub increment: f64,
    pub steps: usize,
    /// Work units of the last step.
    pub last_ops: u64,
    pub total_ops: u64,
}

/// Preconditioned conjugate gradient solver bound to one system.
pub struct Pcg<'a> {
    system: &'a SparseSystem,
    rhs: Vec<f64>,
    pre: Prepared<'a>,
    ops_matvec: u64,
    ops_pre: u64,
}

impl<'a> Pcg<'a> {
    pub fn new(system: &'a SparseSystem, pre: Preconditioner<'a>) -> Result<Self> {
        if !system.symmetric {
            return Err(AfemError::NotSpd(
                "conjugate gradients need a symmetric system".into(),
            ));
        }
        let n = system.n();
        let (pre, ops_pre) = match pre {
            Preconditioner::Identity => (Prepared::Identity, 0),
            Preconditioner::Jacobi => (
                Prepared::Jacobi(system.matrix.diagonal().iter().map(|d| 1.0 / d).collect()),
                n as u64,
            ),
            Preconditioner::Exact => (Prepared::Exact, (system.matrix.nnz() * 4) as u64),
            Preconditioner::Multilevel(h) | Preconditioner::Additive(h) => {
                let cycle = matches!(pre, Preconditioner::Multilevel(_));
                let space = &system.space;
                let mesh = space.mesh();
                if !h.mesh().same_lineage(mesh) || h.mesh().n_elements() != mesh.n_elements() {
                    return Err(AfemError::Lineage(
                        "hierarchy does not end at the system mesh".into(),
                    ));
                }
                let nv = space.n_vertex_dofs();
                let mut vertex_of = Vec::with_capacity(n);
                let mut edge_of = Vec::new();
                for &d in space.free_dofs() {
                    let d = d as usize;
                    if d < nv {
                        vertex_of.push(mesh.vertices()[d]);
                    } else {
                        vertex_of.push(u32::MAX);
                        let (a, b) = mesh.edges()[d - nv];
                        edge_of.push([a, b]);
                    }
                }
                let inv_diag = if space.degree() > 1 {
                    system.matrix.diagonal().iter().map(|d| 1.0 / d).collect()
                } else {
                    Vec::new()
                };
                let ng = h.n_global();
                let base = if cycle {
                    h.ops_per_cycle()
                } else {
                    h.ops_per_apply()
                };
                let ops = base + (2 * n + 3 * edge_of.len()) as u64;
                (
                    Prepared::Multilevel {
                        h,
                        cycle,
                        vertex_of,
                        edge_of,
                        inv_diag,
                        work: HierarchyWork::default(),
                        rg: vec![0.0; ng],
                        zg: vec![0.0; ng],
                    },
                    ops,
                )
            }
        };
        Ok(Pcg {
            system,
            rhs: system.rhs.clone(),
            pre,
            ops_matvec: (system.matrix.nnz() + 6 * n) as u64,
            ops_pre,
        })
    }

    pub fn system(&self) -> &SparseSystem {
        self.system
    }

    /// Replaces the right-hand side for subsequent calls to [`Pcg::start`];
    /// the matrix and the preconditioner are kept.
    pub fn set_rhs(&mut self, rhs: Vec<f64>) -> Result<()> {
        if rhs.len() != self.system.n() {
            return Err(AfemError::Parameter(
                "right-hand side has the wrong length".into(),
            ));
        }
        self.rhs = rhs;
        Ok(())
    }

    fn precondition(&mut self, r: &[f64], z: &mut [f64]) -> Result<()> {
        match &mut self.pre {
            Prepared::Identity => z.copy_from_slice(r),
            Prepared::Jacobi(d) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(d.iter()) {
                    *zi = ri * di;
                }
            }
            Prepared::Exact => {
                let x = solve_csr(&self.system.matrix, r, true)?;
                z.copy_from_slice(&x);
            }
            Prepared::Multilevel {
                h,
                cycle,
                vertex_of,
                edge_of,
                inv_diag,
                work,
                rg,
                zg,
            } => {
                rg.iter_mut().for_each(|x| *x = 0.0);
                let mut e = 0;
                for (i, &v) in vertex_of.iter().enumerate() {
                    if v != u32::MAX {
                        rg[v as usize] += r[i];
                    } else {
                        let [a, b] = edge_of[e];
                        rg[a as usize] += 0.5 * r[i];
                        rg[b as usize] += 0.5 * r[i];
                        e += 1;
                    }
                }
                if *cycle {
                    h.vcycle(rg, zg, work);
                } else {
                    h.apply(rg, zg, work);
                }
                let mut e = 0;
                for (i, &v) in vertex_of.iter().enumerate() {
                    if v != u32::MAX {
                        z[i] = zg[v as usize];
                    } else {
                        let [a, b] = edge_of[e];
                        z[i] = 0.5 * (zg[a as usize] + zg[b as usize]);
                        e += 1;
                    }
                    if !inv_diag.is_empty() {
                        z[i] += r[i] * inv_diag[i];
                    }
                }
            }
        }
        Ok(())
    }

    /// Starts the iteration from `x0` (free DOFs).
    pub fn start(&mut self, x0: Vec<f64>) -> Result<SolverState> {
        let n = self.system.n();
        if x0.len() != n {
            return Err(AfemError::Parameter(
                "initial guess has the wrong length".into(),
            ));
        }
        let ax = self.system.matrix.mul_vec(&x0);
        let r: Vec<f64> = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut z = vec![0.0; n];
        self.precondition(&r, &mut z)?;
        let rz = dot(&r, &z);
        Ok(SolverState {
            x: x0,
            r,
            p: z,
            rz,
            increment: 0.0,
            steps: 0,
            last_ops: self.ops_matvec + self.ops_pre,
            total_ops: self.ops_matvec + self.ops_pre,
        })
    }

    /// One PCG step. The energy error `|||x* - x|||` contracts with a factor
    /// that only depends on the preconditioner quality.
    pub fn step(&mut self, s: &mut SolverState) -> Result<()> {
        let n = self.system.n();
        s.steps += 1;
        s.last_ops = self.ops_matvec + self.ops_pre;
        s.total_ops += s.last_ops;
        if n == 0 || s.rz == 0.0 {
            s.increment = 0.0;
            return Ok(());
        }
        let q = self.system.matrix.mul_vec(&s.p);
        let pq = dot(&s.p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            if s.rz.abs() <= f64::MIN_POSITIVE {
                s.increment = 0.0;
                return Ok(());
            }
            return Err(AfemError::NotSpd(format!(
                "non-positive curvature {pq:e} in conjugate gradients"
            )));
        }
        if s.rz < 0.0 {
            return Err(AfemError::NotSpd(
                "preconditioner is not positive definite".into(),
            ));
        }
        let alpha = s.rz / pq;
        for i in 0..n {
            s.x[i] += alpha * s.p[i];
            s.r[i] -= alpha * q[i];
        }
        s.increment = alpha.abs() * pq.sqrt();
        let mut z = vec![0.0; n];
        self.precondition(&s.r, &mut z)?;
        let rz_new = dot(&s.r, &z);
        let beta = rz_new / s.rz;
        for i in 0..n {
            s.p[i] = z[i] + beta * s.p[i];
        }
        s.rz = rz_new;
        Ok(())
    }
}

/// Functional form of one solver step.
pub fn solver_step(pcg: &mut Pcg<'_>, state: &mut SolverState) -> Result<()> {
    pcg.step(state)
}

/// Observed per-step contractions `|||x* - x_k||| / |||x* - x_{k-1}|||` over
/// `steps` iterations from `x0`, measured against a direct solve.
pub fn measure_contraction(
    system: &SparseSystem,
    pre: Preconditioner<'_>,
    x0: Vec<f64>,
    steps: usize,
) -> Result<Vec<f64>> {
    let exact = direct_solve(system)?;
    let err = |x: &[f64]| {
        let d: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
        system.matrix.quad_form(&d).max(0.0).sqrt()
    };
    let mut pcg = Pcg::new(system, pre)?;
    let mut s = pcg.start(x0)?;
    let mut prev = err(&s.x);
    let mut out = Vec::new();
    let floor = 1e-13 * (system.matrix.quad_form(&exact).max(0.0).sqrt() + prev);
    for _ in 0..steps {
        if prev <= floor {
            break;
        }
        pcg.step(&mut s)?;
        let e = err(&s.x);
        out.push(e / prev);
        prev = e;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fespace::{assemble, build_space};
    use crate::mesh::{criss_cross, EdgeRule, Mesh};
    use crate::problem::ProblemSpec;

    fn setup(levels: usize) -> (Hierarchy, Arc<Mesh>, ProblemSpec) {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        let mut mesh = Arc::new(Mesh::initial(&p, &t, &[], EdgeRule::LongestEdge).unwrap());
        let prob = ProblemSpec::poisson("p", 1.0);
        let mut h = Hierarchy::new(mesh.clone(), &prob).unwrap();
        for l in 0..levels {
            // refine towards a corner to get a graded hierarchy
            let marked: Vec<usize> = (0..mesh.n_elements())
                .filter(|&e| {
                    let c = mesh.corners(e);
                    c.iter().any(|x| x[0] + x[1] < 0.6 / (l as f64 + 1.0))
                })
                .collect();
            mesh = Arc::new(mesh.refine(&marked).unwrap());
            h.extend(mesh.clone()).unwrap();
        }
        (h, mesh, prob)
    }

    #[test]
    fn multilevel_pcg_contracts() {
        let (h, mesh, prob) = setup(8);
        for p in [1, 2] {
            let space = build_space(mesh.clone(), p).unwrap();
            let sys = assemble(&space, &prob).unwrap();
            for pre in [Preconditioner::Multilevel(&h), Preconditioner::Additive(&h)] {
                let q = measure_contraction(&sys, pre, vec![0.0; sys.n()], 15).unwrap();
                assert!(q.iter().all(|&q| q < 0.9), "p={p}: {q:?}");
            }
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let (_, mesh, prob) = setup(2);
        let space = build_space(mesh, 1).unwrap();
        let sys = assemble(&space, &prob).unwrap();
        let q = measure_contraction(&sys, Preconditioner::Exact, vec![0.0; sys.n()], 3).unwrap();
        assert!(q[0] <= 1e-10, "{q:?}");
    }

    #[test]
    fn preconditioner_is_symmetric() {
        let (h, mesh, prob) = setup(4);
        for p in [1, 2] {
            let space = build_space(mesh.clone(), p).unwrap();
            let sys = assemble(&space, &prob).unwrap();
            for pre in [Preconditioner::Multilevel(&h), Preconditioner::Additive(&h)] {
                let mut pcg = Pcg::new(&sys, pre).unwrap();
                let n = sys.n();
                let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
                let b: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
                let (mut za, mut zb) = (vec![0.0; n], vec![0.0; n]);
                pcg.precondition(&a, &mut za).unwrap();
                pcg.precondition(&b, &mut zb).unwrap();
                let (x, y) = (dot(&b, &za), dot(&a, &zb));
                assert!(
                    (x - y).abs() < 1e-12 * x.abs().max(1.0),
                    "p={p}: {x} vs {y}"
                );
                assert!(dot(&a, &za) > 0.0);
            }
        }
    }
}
