use std::sync::Arc;

use rayon::prelude::*;

use super::{shape_grads, shape_values, ElemGeom, Space};
use crate::error::{AfemError, Result};
use crate::mesh::NONE;
use crate::problem::{Diffusion, GoalData, Nonlinearity, ProblemSpec, ScalarField, VectorField};
use crate::quadrature::TriangleRule;
use crate::sparse::{dot, CsrMatrix};

const CHUNK: usize = 4096;

/// Discrete system on the free DOFs. The full solution is `lift + expand(x)`.
pub struct SparseSystem {
    pub space: Arc<Space>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Nodal interpolant of the Dirichlet data, zero on free DOFs.
    pub lift: Vec<f64>,
    pub symmetric: bool,
}

impl SparseSystem {
    pub fn n(&self) -> usize {
        self.rhs.len()
    }

    /// Full coefficient vector for free values `x`.
    pub fn full(&self, x: &[f64]) -> Vec<f64> {
        self.space.expand(x, &self.lift)
    }
}

#[derive(Clone, Copy)]
enum Principal<'a> {
    Diffusion(&'a Diffusion),
    Kacanov(&'a Nonlinearity, &'a [f64]),
}

type Local = ([[f64; 6]; 6], [f64; 6]);

struct Kernel<'a> {
    space: &'a Space,
    principal: Principal<'a>,
    convection: Option<&'a VectorField>,
    reaction: Option<&'a ScalarField>,
    f: Option<&'a ScalarField>,
    f_vec: Option<&'a VectorField>,
    rule: TriangleRule,
}

impl Kernel<'_> {
    fn local(&self, t: usize) -> Local {
        let s = self.space;
        let p = s.degree();
        let n = s.n_local();
        let g = s.geom(t);
        let mut k = [[0.0; 6]; 6];
        let mut f = [0.0; 6];
        for (l, w) in self.rule.points.iter().zip(&self.rule.weights) {
            let w = w * g.area;
            let x = g.point(*l);
            let phi = shape_values(p, *l);
            let grad = shape_grads(p, &g, *l);
            let a = match self.principal {
                Principal::Diffusion(d) => d.eval(x, g.centroid),
                Principal::Kacanov(mu, lin) => {
                    let du = s.grad_at(lin, t, &g, *l);
                    let m = (mu.mu)(du[0] * du[0] + du[1] * du[1]);
                    [[m, 0.0], [0.0, m]]
                }
            };
            let b = self.convection.map(|b| b.eval(x, g.centroid));
            let c = self.reaction.map(|c| c.eval(x, g.centroid)).unwrap_or(0.0);
            for j in 0..n {
                let ag = [
                    a[0][0] * grad[j][0] + a[0][1] * grad[j][1],
                    a[1][0] * grad[j][0] + a[1][1] * grad[j][1],
                ];
                let bj = b
                    .map(|b| b[0] * grad[j][0] + b[1] * grad[j][1])
                    .unwrap_or(0.0);
                for i in 0..n {
                    k[i][j] +=
                        w * (ag[0] * grad[i][0] + ag[1] * grad[i][1] + (bj + c * phi[j]) * phi[i]);
                }
            }
            let fx = self.f.map(|f| f.eval(x, g.centroid)).unwrap_or(0.0);
            let fv = self
                .f_vec
                .map(|f| f.eval(x, g.centroid))
                .unwrap_or([0.0; 2]);
            for i in 0..n {
                f[i] += w * (fx * phi[i] + fv[0] * grad[i][0] + fv[1] * grad[i][1]);
            }
        }
        (k, f)
    }

    /// Local contributions for all elements, computed in parallel chunks and
    /// handed to `sink` in element order.
    fn for_each(&self, mut sink: impl FnMut(usize, &Local)) {
        let ne = self.space.mesh().n_elements();
        let mut start = 0;
        while start < ne {
            let end = (start + CHUNK * rayon::current_num_threads().max(1)).min(ne);
            let locals: Vec<Local> = (start..end)
                .into_par_iter()
                .map(|t| self.local(t))
                .collect();
            for (i, l) in locals.iter().enumerate() {
                sink(start + i, l);
            }
            start = end;
        }
    }
}

fn kernel<'a>(
    space: &'a Space,
    problem: &'a ProblemSpec,
    principal: Principal<'a>,
    lower: bool,
    load: bool,
) -> Kernel<'a> {
    Kernel {
        space,
        principal,
        convection: if lower {
            problem.convection.as_ref()
        } else {
            None
        },
        reaction: if lower {
            problem.reaction.as_ref()
        } else {
            None
        },
        f: if load { problem.f.as_ref() } else { None },
        f_vec: if load { problem.f_vec.as_ref() } else { None },
        rule: space.rule(),
    }
}

fn build_system(
    space: &Arc<Space>,
    problem: &ProblemSpec,
    k: Kernel<'_>,
    symmetric: bool,
) -> SparseSystem {
    let lift = space.dirichlet_lift(
        problem
            .dirichlet
            .as_ref()
            .map(|d| &*d.value as &dyn Fn([f64; 2]) -> f64),
    );
    let pattern = space.pattern();
    let mut matrix = pattern.csr.clone();
    let mut rhs = vec![0.0; space.n_free()];
    let nl = space.n_local();
    k.for_each(|t, (kl, fl)| {
        let dofs = space.element_dofs(t);
        for i in 0..nl {
            let fi = space.free_index[dofs[i] as usize];
            if fi == NONE {
                continue;
            }
            rhs[fi as usize] += fl[i];
            for j in 0..nl {
                let pos = pattern.elem_pos[(t * nl + i) * nl + j];
                if pos != NONE {
                    matrix.values[pos as usize] += kl[i][j];
                } else {
                    rhs[fi as usize] -= kl[i][j] * lift[dofs[j] as usize];
                }
            }
        }
    });
    SparseSystem {
        space: space.clone(),
        matrix,
        rhs,
        lift,
        symmetric,
    }
}

/// Assembles the linear problem with Dirichlet DOFs eliminated.
pub fn assemble(space: &Arc<Space>, problem: &ProblemSpec) -> Result<SparseSystem> {
    problem.validate()?;
    let d = problem.diffusion.as_ref().ok_or_else(|| {
        AfemError::Problem("quasi-linear problems are assembled with assemble_kacanov".into())
    })?;
    let k = kernel(space, problem, Principal::Diffusion(d), true, true);
    Ok(build_system(space, problem, k, problem.is_symmetric()))
}

/// Kačanov linearization `<mu(|grad u|^2) grad w, grad v> = F(v)` around `lin`.
pub fn assemble_kacanov(
    space: &Arc<Space>,
    problem: &ProblemSpec,
    lin: &[f64],
) -> Result<SparseSystem> {
    problem.validate()?;
    let mu = problem
        .nonlinearity
        .as_ref()
        .ok_or_else(|| AfemError::Problem("problem has no nonlinearity".into()))?;
    let k = kernel(space, problem, Principal::Kacanov(mu, lin), false, true);
    Ok(build_system(space, problem, k, true))
}

/// Stiffness matrix of the energy scalar product on free DOFs.
pub fn assemble_energy(space: &Arc<Space>, problem: &ProblemSpec) -> CsrMatrix {
    let d = problem.energy_diffusion();
    let k = kernel(space, problem, Principal::Diffusion(&d), false, false);
    build_system(space, problem, k, true).matrix
}

/// `(F(phi_i))_i` over all DOFs for the load `int f v + fvec . grad v`.
pub fn load_vector(
    space: &Space,
    f: Option<&ScalarField>,
    f_vec: Option<&VectorField>,
) -> Vec<f64> {
    let p = space.degree();
    let rule = space.rule();
    let mut out = vec![0.0; space.n_dofs()];
    for t in 0..space.mesh().n_elements() {
        let g = space.geom(t);
        let dofs = space.element_dofs(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let w = w * g.area;
            let x = g.point(*l);
            let phi = shape_values(p, *l);
            let grad = shape_grads(p, &g, *l);
            let fx = f.map(|f| f.eval(x, g.centroid)).unwrap_or(0.0);
            let fv = f_vec.map(|f| f.eval(x, g.centroid)).unwrap_or([0.0; 2]);
            for (i, &d) in dofs.iter().enumerate() {
                out[d as usize] += w * (fx * phi[i] + fv[0] * grad[i][0] + fv[1] * grad[i][1]);
            }
        }
    }
    out
}

/// Coefficients of the goal functional over all DOFs.
pub fn goal_vector(space: &Space, goal: &GoalData) -> Vec<f64> {
    load_vector(space, goal.g.as_ref(), goal.g_vec.as_ref())
}

/// `(b(u, phi_i))_i` over all DOFs; for quasi-linear problems `<mu(|grad u|^2) grad u, grad phi_i>`.
pub fn operator_apply(space: &Space, problem: &ProblemSpec, u: &[f64]) -> Vec<f64> {
    let p = space.degree();
    let rule = space.rule();
    let mut out = vec![0.0; space.n_dofs()];
    for t in 0..space.mesh().n_elements() {
        let g = space.geom(t);
        let dofs = space.element_dofs(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let w = w * g.area;
            let x = g.point(*l);
            let phi = shape_values(p, *l);
            let grad = shape_grads(p, &g, *l);
            let du = space.grad_at(u, t, &g, *l);
            let flux = match (&problem.diffusion, &problem.nonlinearity) {
                (_, Some(mu)) => {
                    let m = (mu.mu)(du[0] * du[0] + du[1] * du[1]);
                    [m * du[0], m * du[1]]
                }
                (Some(d), None) => {
                    let a = d.eval(x, g.centroid);
                    [
                        a[0][0] * du[0] + a[0][1] * du[1],
                        a[1][0] * du[0] + a[1][1] * du[1],
                    ]
                }
                (None, None) => [0.0; 2],
            };
            let mut lower = 0.0;
            if let Some(b) = &problem.convection {
                let bx = b.eval(x, g.centroid);
                lower += bx[0] * du[0] + bx[1] * du[1];
            }
            if let Some(c) = &problem.reaction {
                lower += c.eval(x, g.centroid) * space.value_at(u, t, *l);
            }
            for (i, &d) in dofs.iter().enumerate() {
                out[d as usize] +=
                    w * (flux[0] * grad[i][0] + flux[1] * grad[i][1] + lower * phi[i]);
            }
        }
    }
    out
}

/// `b(u, v)` for full coefficient vectors.
pub fn form_apply(space: &Space, problem: &ProblemSpec, u: &[f64], v: &[f64]) -> f64 {
    dot(&operator_apply(space, problem, u), v)
}

/// Energy scalar product `int A grad u . grad v` (identity `A` for quasi-linear problems).
pub fn energy_product(space: &Space, problem: &ProblemSpec, u: &[f64], v: &[f64]) -> f64 {
    let d = problem.energy_diffusion();
    let rule = space.rule();
    let mut s = 0.0;
    for t in 0..space.mesh().n_elements() {
        let g = space.geom(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let a = d.eval(g.point(*l), g.centroid);
            let du = space.grad_at(u, t, &g, *l);
            let dv = space.grad_at(v, t, &g, *l);
            s += w
                * g.area
                * (dv[0] * (a[0][0] * du[0] + a[0][1] * du[1])
                    + dv[1] * (a[1][0] * du[0] + a[1][1] * du[1]));
        }
    }
    s
}

/// Energy norm of `u* - u` for a known exact gradient.
pub fn energy_error(
    space: &Space,
    problem: &ProblemSpec,
    u: &[f64],
    exact_grad: &dyn Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let d = problem.energy_diffusion();
    let rule = TriangleRule::exact_to(6);
    let mut s = 0.0;
    for t in 0..space.mesh().n_elements() {
        let g = space.geom(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = g.point(*l);
            let a = d.eval(x, g.centroid);
            let du = space.grad_at(u, t, &g, *l);
            let ex = exact_grad(x);
            let e = [ex[0] - du[0], ex[1] - du[1]];
            s += w
                * g.area
                * (e[0] * (a[0][0] * e[0] + a[0][1] * e[1])
                    + e[1] * (a[1][0] * e[0] + a[1][1] * e[1]));
        }
    }
    s.max(0.0).sqrt()
}

/// Energy `E(v) = 1/2 int int_0^{|grad v|^2} mu - F(v)` of a quasi-linear problem,
/// with `load` the vector of `F(phi_i)`.
pub fn kacanov_energy(space: &Space, mu: &Nonlinearity, load: &[f64], v: &[f64]) -> f64 {
    let zero = vec![0.0; v.len()];
    kacanov_energy_difference(space, mu, load, &zero, v)
}

/// `E(w) - E(v)`, summed elementwise so small differences keep their accuracy.
pub fn kacanov_energy_difference(
    space: &Space,
    mu: &Nonlinearity,
    load: &[f64],
    v: &[f64],
    w: &[f64],
) -> f64 {
    let rule = if space.degree() == 1 {
        TriangleRule::centroid()
    } else {
        space.rule()
    };
    let mut s = 0.0;
    for t in 0..space.mesh().n_elements() {
        let g: ElemGeom = space.geom(t);
        for (l, wq) in rule.points.iter().zip(&rule.weights) {
            let dv = space.grad_at(v, t, &g, *l);
            let dw = space.grad_at(w, t, &g, *l);
            let (a, b) = (dv[0] * dv[0] + dv[1] * dv[1], dw[0] * dw[0] + dw[1] * dw[1]);
            s += 0.5 * wq * g.area * mu.integral(a, b);
        }
    }
    let df: f64 = load
        .iter()
        .zip(w.iter().zip(v))
        .map(|(f, (a, b))| f * (a - b))
        .sum();
    s - df
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_space;
    use crate::mesh::{criss_cross, EdgeRule, Mesh};
    use crate::problem::DirichletData;

    fn space(p: usize) -> Arc<Space> {
        let (pts, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 3, 3);
        build_space(
            Arc::new(Mesh::initial(&pts, &t, &[], EdgeRule::LongestEdge).unwrap()),
            p,
        )
        .unwrap()
    }

    #[test]
    fn stiffness_annihilates_constants() {
        for p in [1, 2] {
            let s = space(p);
            let prob = ProblemSpec::poisson("c", 0.0).with_dirichlet(DirichletData {
                value: Arc::new(|_| 1.0),
                gradient: None,
            });
            let sys = assemble(&s, &prob).unwrap();
            // the discrete solution for constant data is the constant
            let x = vec![1.0; sys.n()];
            let r = sys.matrix.mul_vec(&x);
            for (ri, bi) in r.iter().zip(&sys.rhs) {
                assert!((ri - bi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn load_of_unit_source_is_area() {
        for p in [1, 2] {
            let s = space(p);
            let f = load_vector(&s, Some(&ScalarField::Constant(1.0)), None);
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_product_matches_matrix() {
        let s = space(2);
        let prob = ProblemSpec::poisson("e", 1.0);
        let a = assemble_energy(&s, &prob);
        let x: Vec<f64> = (0..s.n_free()).map(|i| (i as f64 * 0.7).sin()).collect();
        let full = s.expand(&x, &vec![0.0; s.n_dofs()]);
        let e = energy_product(&s, &prob, &full, &full);
        assert!((e - a.quad_form(&x)).abs() < 1e-12 * e.abs());
    }
}
