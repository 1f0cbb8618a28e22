//! Residual error estimators.
//!
//! Each element owns its volume residual and the normal-flux jumps over all of
//! its edges, both scaled with its own area: `|T| ||R||_T^2 + |T|^{1/2} ||[s.n]||_{dT}^2`.
//! With that weighting one bisection reduces the scaling by exactly `2^{-1/2}`.

use rayon::prelude::*;

use crate::error::{AfemError, Result};
use crate::fespace::{ElemGeom, Space};
use crate::mesh::BoundaryKind;
use crate::problem::{Point, ProblemSpec};
use crate::quadrature::{GaussRule, TriangleRule};

/// Squared local contributions `eta_T^2` and their total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Indicators {
    pub values: Vec<f64>,
}

impl Indicators {
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `eta(M) = (sum_{T in M} eta_T^2)^{1/2}`.
    pub fn subset_total(&self, marked: &[usize]) -> f64 {
        marked.iter().map(|&t| self.values[t]).sum::<f64>().sqrt()
    }
}

struct Ctx<'a> {
    space: &'a Space,
    problem: &'a ProblemSpec,
    v: &'a [f64],
}

impl Ctx<'_> {
    /// Flux `A grad v - fvec` of element `t` at `x`.
    fn flux(&self, t: usize, g: &ElemGeom, x: Point) -> [f64; 2] {
        let l = g.barycentric(x);
        let dv = self.space.grad_at(self.v, t, g, l);
        let mut s = match (&self.problem.diffusion, &self.problem.nonlinearity) {
            (_, Some(mu)) => {
                let m = (mu.mu)(dv[0] * dv[0] + dv[1] * dv[1]);
                [m * dv[0], m * dv[1]]
            }
            (Some(d), None) => {
                let a = d.eval(x, g.centroid);
                [
                    a[0][0] * dv[0] + a[0][1] * dv[1],
                    a[1][0] * dv[0] + a[1][1] * dv[1],
                ]
            }
            (None, None) => [0.0; 2],
        };
        if let Some(f) = &self.problem.f_vec {
            let fv = f.eval(x, g.centroid);
            s[0] -= fv[0];
            s[1] -= fv[1];
        }
        s
    }

    /// Strong volume residual `f - div fvec + div(A grad v) - b.grad v - c v`.
    fn residual(&self, t: usize, g: &ElemGeom, hess: &[[f64; 2]; 2], l: [f64; 3]) -> f64 {
        let p = self.problem;
        let x = g.point(l);
        let dv = self.space.grad_at(self.v, t, g, l);
        let mut r = p.f.as_ref().map(|f| f.eval(x, g.centroid)).unwrap_or(0.0);
        if let Some(f) = &p.f_vec {
            r -= f.div(x);
        }
        match (&p.diffusion, &p.nonlinearity) {
            (_, Some(mu)) => {
                let s = dv[0] * dv[0] + dv[1] * dv[1];
                let lap = hess[0][0] + hess[1][1];
                let quad = dv[0] * (hess[0][0] * dv[0] + hess[0][1] * dv[1])
                    + dv[1] * (hess[1][0] * dv[0] + hess[1][1] * dv[1]);
                r += (mu.mu)(s) * lap + 2.0 * (mu.dmu)(s) * quad;
            }
            (Some(d), None) => {
                let a = d.eval(x, g.centroid);
                let da = d.div(x);
                r += da[0] * dv[0] + da[1] * dv[1];
                for i in 0..2 {
                    for j in 0..2 {
                        r += a[i][j] * hess[i][j];
                    }
                }
            }
            (None, None) => {}
        }
        if let Some(b) = &p.convection {
            let bx = b.eval(x, g.centroid);
            r -= bx[0] * dv[0] + bx[1] * dv[1];
        }
        if let Some(c) = &p.reaction {
            r -= c.eval(x, g.centroid) * self.space.value_at(self.v, t, l);
        }
        r
    }
}

fn edge_frame(g: &ElemGeom, i: usize) -> (Point, Point, f64, [f64; 2]) {
    let a = g.corners[(i + 1) % 3];
    let b = g.corners[(i + 2) % 3];
    let d = [b[0] - a[0], b[1] - a[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    (a, b, len, [d[1] / len, -d[0] / len])
}

/// Values of `f - Pi f` at the Gauss points, with `Pi` the L2 projection onto
/// polynomials of degree `q` on `[0, 1]`.
fn edge_projection_residual(vals: &[f64], rule: &GaussRule, q: usize) -> Vec<f64> {
    let legendre = |k: usize, s: f64| -> f64 {
        let x = 2.0 * s - 1.0;
        let (mut p0, mut p1) = (1.0, x);
        let pk = match k {
            0 => 1.0,
            1 => x,
            _ => {
                for n in 2..=k {
                    let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            }
        };
        ((2 * k + 1) as f64).sqrt() * pk
    };
    let mut out = vals.to_vec();
    for k in 0..=q {
        let c: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .zip(vals)
            .map(|((s, w), v)| w * v * legendre(k, *s))
            .sum();
        for (o, s) in out.iter_mut().zip(&rule.points) {
            *o -= c * legendre(k, *s);
        }
    }
    out
}

/// Residual indicators of a discrete function `v` (full coefficient vector).
pub fn residual_indicators(space: &Space, v: &[f64], problem: &ProblemSpec) -> Result<Indicators> {
    if v.len() != space.n_dofs() {
        return Err(AfemError::Parameter(
            "coefficient vector has the wrong length".into(),
        ));
    }
    let ctx = Ctx { space, problem, v };
    let mesh = space.mesh();
    let p = space.degree();
    let rule = space.rule();
    let erule = GaussRule::new(p + 2);
    let brule = GaussRule::new(6);
    let dgrad = problem.dirichlet.as_ref().and_then(|d| d.gradient.clone());
    let values = (0..mesh.n_elements())
        .into_par_iter()
        .map(|t| {
            let g = space.geom(t);
            let hess = space.hessian(v, t, &g);
            let mut vol = 0.0;
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let r = ctx.residual(t, &g, &hess, *l);
                vol += w * r * r;
            }
            let mut eta = g.area * g.area * vol;
            let sqrt_area = g.area.sqrt();
            let edges = mesh.triangle_edges(t);
            for i in 0..3 {
                let (a, b, len, n) = edge_frame(&g, i);
                let at = |s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                match (mesh.neighbor(t, i), mesh.edge_boundary(edges[i])) {
                    (Some(nb), _) => {
                        let gn = space.geom(nb);
                        let mut j = 0.0;
                        for (s, w) in erule.points.iter().zip(&erule.weights) {
                            let x = at(*s);
                            let (f1, f2) = (ctx.flux(t, &g, x), ctx.flux(nb, &gn, x));
                            let d = (f1[0] - f2[0]) * n[0] + (f1[1] - f2[1]) * n[1];
                            j += w * d * d;
                        }
                        eta += sqrt_area * len * j;
                    }
                    (None, Some(BoundaryKind::Neumann)) => {
                        let mut j = 0.0;
                        for (s, w) in erule.points.iter().zip(&erule.weights) {
                            let f = ctx.flux(t, &g, at(*s));
                            let d = f[0] * n[0] + f[1] * n[1];
                            j += w * d * d;
                        }
                        eta += sqrt_area * len * j;
                    }
                    (None, _) => {
                        if let Some(dg) = &dgrad {
                            let tan = [-n[1], n[0]];
                            let vals: Vec<f64> = brule
                                .points
                                .iter()
                                .map(|s| {
                                    let gr = dg(at(*s));
                                    gr[0] * tan[0] + gr[1] * tan[1]
                                })
                                .collect();
                            let res = edge_projection_residual(&vals, &brule, p - 1);
                            let j: f64 =
                                res.iter().zip(&brule.weights).map(|(r, w)| w * r * r).sum();
                            eta += sqrt_area * len * j;
                        }
                    }
                }
            }
            eta
        })
        .collect();
    Ok(Indicators { values })
}

/// Indicators of the dual problem `b(v, z) = G(v)` for symmetric problems.
pub fn dual_indicators(space: &Space, z: &[f64], problem: &ProblemSpec) -> Result<Indicators> {
    let dual = dual_problem(problem)?;
    residual_indicators(space, z, &dual)
}

/// The dual problem: same operator, goal data as load, homogeneous Dirichlet data.
pub fn dual_problem(problem: &ProblemSpec) -> Result<ProblemSpec> {
    if !problem.is_symmetric() {
        return Err(AfemError::Problem(
            "goal-oriented estimation needs a symmetric problem".into(),
        ));
    }
    let goal = problem
        .goal
        .as_ref()
        .ok_or_else(|| AfemError::Problem("problem has no goal functional".into()))?;
    let mut dual = problem.clone();
    dual.name = format!("{}-dual", problem.name);
    dual.f = goal.g.clone();
    dual.f_vec = goal.g_vec.clone();
    dual.dirichlet = None;
    dual.exact = None;
    Ok(dual)
}

/// Data oscillation of `v`: the parts of the volume residual and the normal
/// jumps not captured by polynomials of degree `2(p - 1)`.
pub fn data_oscillation(space: &Space, v: &[f64], problem: &ProblemSpec) -> Result<f64> {
    if v.len() != space.n_dofs() {
        return Err(AfemError::Parameter(
            "coefficient vector has the wrong length".into(),
        ));
    }
    let ctx = Ctx { space, problem, v };
    let mesh = space.mesh();
    let p = space.degree();
    let q = 2 * (p - 1);
    let rule = TriangleRule::conical(10);
    let erule = GaussRule::new(8);
    // basis of P_q(T) in barycentric monomials
    let basis = |l: [f64; 3]| -> Vec<f64> {
        if q == 0 {
            vec![1.0]
        } else {
            vec![1.0, l[1], l[2], l[1] * l[1], l[1] * l[2], l[2] * l[2]]
        }
    };
    let nb = if q == 0 { 1 } else { 6 };
    let total: f64 = (0..mesh.n_elements())
        .into_par_iter()
        .map(|t| {
            let g = space.geom(t);
            let hess = space.hessian(v, t, &g);
            let rs: Vec<f64> = rule
                .points
                .iter()
                .map(|l| ctx.residual(t, &g, &hess, *l))
                .collect();
            let mut gram = vec![vec![0.0; nb]; nb];
            let mut rhs = vec![0.0; nb];
            for ((l, w), r) in rule.points.iter().zip(&rule.weights).zip(&rs) {
                let phi = basis(*l);
                for i in 0..nb {
                    rhs[i] += w * r * phi[i];
                    for j in 0..nb {
                        gram[i][j] += w * phi[i] * phi[j];
                    }
                }
            }
            let chol = crate::linsolve::DenseCholesky::new(&gram).expect("Gram matrix is SPD");
            chol.solve_in_place(&mut rhs);
            let mut vol = 0.0;
            for ((l, w), r) in rule.points.iter().zip(&rule.weights).zip(&rs) {
                let proj: f64 = basis(*l).iter().zip(&rhs).map(|(a, b)| a * b).sum();
                vol += w * (r - proj).powi(2);
            }
            let mut osc = g.area * g.area * vol;
            for i in 0..3 {
                if let Some(nbr) = mesh.neighbor(t, i) {
                    let (a, b, len, n) = edge_frame(&g, i);
                    let gn = space.geom(nbr);
                    let vals: Vec<f64> = erule
                        .points
                        .iter()
                        .map(|s| {
                            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                            let (f1, f2) = (ctx.flux(t, &g, x), ctx.flux(nbr, &gn, x));
                            (f1[0] - f2[0]) * n[0] + (f1[1] - f2[1]) * n[1]
                        })
                        .collect();
                    let res = edge_projection_residual(&vals, &erule, q);
                    let j: f64 = res.iter().zip(&erule.weights).map(|(r, w)| w * r * r).sum();
                    osc += g.area.sqrt() * len * j;
                }
            }
            osc
        })
        .sum();
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fespace::build_space;
    use crate::mesh::{EdgeRule, Mesh};
    use crate::problem::{ProblemSpec, ScalarField};

    #[test]
    fn subset_total_of_all_is_total() {
        let ind = Indicators {
            values: vec![1.0, 4.0, 4.0],
        };
        assert_eq!(ind.total(), 3.0);
        assert_eq!(ind.subset_total(&[1, 2]), 8f64.sqrt());
    }

    #[test]
    fn single_element_oscillation() {
        let mesh = Arc::new(
            Mesh::initial(
                &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                &[[0, 1, 2]],
                &[],
                EdgeRule::LongestEdge,
            )
            .unwrap(),
        );
        let space = build_space(mesh, 1).unwrap();
        let prob = ProblemSpec::poisson("x", 0.0).with_source(ScalarField::Smooth {
            value: Arc::new(|x| x[0]),
        });
        let osc = data_oscillation(&space, &[0.0; 3], &prob).unwrap();
        // |T| int_T (x - 1/3)^2 = 1/2 * 1/36
        assert!((osc * osc - 1.0 / 72.0).abs() < 1e-14);
    }
}
