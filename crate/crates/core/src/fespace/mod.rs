//! Continuous Lagrange spaces of degree one and two.

mod assemble;

pub use assemble::{
    assemble, assemble_energy, assemble_kacanov, energy_error, energy_product, form_apply,
    goal_vector, kacanov_energy, kacanov_energy_difference, load_vector, operator_apply,
    SparseSystem,
};

use std::sync::{Arc, OnceLock};

use crate::error::{AfemError, Result};
use crate::mesh::{BoundaryKind, Mesh, VertexId, NONE};
use crate::problem::Point;
use crate::quadrature::TriangleRule;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    Interior,
    Dirichlet,
    Neumann,
}

/// Affine element map data.
#[derive(Clone, Copy, Debug)]
pub struct ElemGeom {
    pub corners: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_l: [[f64; 2]; 3],
    pub centroid: Point,
}

impl ElemGeom {
    pub fn new(corners: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = corners;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let grad_l = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        ElemGeom {
            corners,
            area: 0.5 * det,
            grad_l,
            centroid: [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0],
        }
    }

    pub fn point(&self, l: [f64; 3]) -> Point {
        let c = &self.corners;
        [
            l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
            l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
        ]
    }

    pub fn barycentric(&self, x: Point) -> [f64; 3] {
        let p0 = self.corners[0];
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = self.grad_l[1][0] * d[0] + self.grad_l[1][1] * d[1];
        let l2 = self.grad_l[2][0] * d[0] + self.grad_l[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Local basis of degree `p` at barycentric point `l`. Local order: vertices,
/// then the edge opposite each vertex.
pub fn shape_values(p: usize, l: [f64; 3]) -> [f64; 6] {
    if p == 1 {
        [l[0], l[1], l[2], 0.0, 0.0, 0.0]
    } else {
        [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
            4.0 * l[0] * l[1],
        ]
    }
}

pub fn shape_grads(p: usize, g: &ElemGeom, l: [f64; 3]) -> [[f64; 2]; 6] {
    let gl = &g.grad_l;
    let mut out = [[0.0; 2]; 6];
    if p == 1 {
        out[..3].copy_from_slice(gl);
        return out;
    }
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        out[i] = [s * gl[i][0], s * gl[i][1]];
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        out[3 + i] = [
            4.0 * (l[j] * gl[k][0] + l[k] * gl[j][0]),
            4.0 * (l[j] * gl[k][1] + l[k] * gl[j][1]),
        ];
    }
    out
}

/// Constant Hessians of the local basis (zero for degree one).
pub fn shape_hessians(p: usize, g: &ElemGeom) -> [[[f64; 2]; 2]; 6] {
    let mut out = [[[0.0; 2]; 2]; 6];
    if p == 1 {
        return out;
    }
    let gl = &g.grad_l;
    let outer = |a: [f64; 2], b: [f64; 2]| [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]];
    for i in 0..3 {
        let o = outer(gl[i], gl[i]);
        out[i] = o.map(|r| r.map(|v| 4.0 * v));
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let (a, b) = (outer(gl[j], gl[k]), outer(gl[k], gl[j]));
        for r in 0..2 {
            for c in 0..2 {
                out[3 + i][r][c] = 4.0 * (a[r][c] + b[r][c]);
            }
        }
    }
    out
}

pub(crate) struct Pattern {
    pub csr: CsrMatrix,
    /// Position in `csr.values` of each local pair, `NONE` when either DOF is fixed.
    pub elem_pos: Vec<u32>,
}

/// Lagrange finite element space on a mesh.
pub struct Space {
    mesh: Arc<Mesh>,
    degree: usize,
    n_local: usize,
    elem_dofs: Vec<u32>,
    dof_points: Vec<Point>,
    kinds: Vec<DofKind>,
    free_index: Vec<u32>,
    free_dofs: Vec<u32>,
    vertex_dof: Vec<u32>,
    n_vertex_dofs: usize,
    pattern: OnceLock<Pattern>,
}

/// Builds the degree-`p` space on `mesh`.
pub fn build_space(mesh: Arc<Mesh>, p: usize) -> Result<Arc<Space>> {
    if p != 1 && p != 2 {
        return Err(AfemError::Parameter(format!(
            "polynomial degree {p} is not supported (use 1 or 2)"
        )));
    }
    let nv = mesh.n_vertices();
    let mut vertex_dof = vec![NONE; mesh.global_vertex_count()];
    let mut dof_points = Vec::with_capacity(nv + if p == 2 { mesh.n_edges() } else { 0 });
    for (i, &v) in mesh.vertices().iter().enumerate() {
        vertex_dof[v as usize] = i as u32;
        dof_points.push(mesh.point(v));
    }
    let mut kinds = vec![DofKind::Interior; nv];
    for (e, k) in mesh.boundary_edges() {
        for v in [e.0, e.1] {
            let d = vertex_dof[v as usize] as usize;
            kinds[d] = match (kinds[d], k) {
                (_, BoundaryKind::Dirichlet) | (DofKind::Dirichlet, _) => DofKind::Dirichlet,
                _ => DofKind::Neumann,
            };
        }
    }
    if p == 2 {
        for (e, &(a, b)) in mesh.edges().iter().enumerate() {
            let (pa, pb) = (mesh.point(a), mesh.point(b));
            dof_points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            kinds.push(match mesh.edge_boundary(e) {
                None => DofKind::Interior,
                Some(BoundaryKind::Dirichlet) => DofKind::Dirichlet,
                Some(BoundaryKind::Neumann) => DofKind::Neumann,
            });
        }
    }
    let n_local = if p == 1 { 3 } else { 6 };
    let mut elem_dofs = Vec::with_capacity(mesh.n_elements() * n_local);
    for t in 0..mesh.n_elements() {
        let tri = mesh.triangle(t);
        for &v in &tri.v {
            elem_dofs.push(vertex_dof[v as usize]);
        }
        if p == 2 {
            for e in mesh.triangle_edges(t) {
                elem_dofs.push((nv + e) as u32);
            }
        }
    }
    let mut free_index = vec![NONE; kinds.len()];
    let mut free_dofs = Vec::new();
    for (d, k) in kinds.iter().enumerate() {
        if *k != DofKind::Dirichlet {
            free_index[d] = free_dofs.len() as u32;
            free_dofs.push(d as u32);
        }
    }
    Ok(Arc::new(Space {
        mesh,
        degree: p,
        n_local,
        elem_dofs,
        dof_points,
        kinds,
        free_index,
        free_dofs,
        vertex_dof,
        n_vertex_dofs: nv,
        pattern: OnceLock::new(),
    }))
}

impl Space {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_dofs(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_vertex_dofs(&self) -> usize {
        self.n_vertex_dofs
    }

    pub fn element_dofs(&self, t: usize) -> &[u32] {
        &self.elem_dofs[t * self.n_local..(t + 1) * self.n_local]
    }

    pub fn dof_point(&self, d: usize) -> Point {
        self.dof_points[d]
    }

    pub fn dof_kind(&self, d: usize) -> DofKind {
        self.kinds[d]
    }

    /// Free index of DOF `d`, or `None` for Dirichlet DOFs.
    pub fn free_index(&self, d: usize) -> Option<usize> {
        let i = self.free_index[d];
        (i != NONE).then_some(i as usize)
    }

    pub fn free_dofs(&self) -> &[u32] {
        &self.free_dofs
    }

    /// DOF attached to global vertex `v`, if the vertex belongs to the mesh.
    pub fn vertex_dof(&self, v: VertexId) -> Option<usize> {
        self.vertex_dof
            .get(v as usize)
            .and_then(|&d| (d != NONE).then_some(d as usize))
    }

    pub fn geom(&self, t: usize) -> ElemGeom {
        ElemGeom::new(self.mesh.corners(t))
    }

    /// Quadrature rule exact for products of two basis functions with a degree-two weight.
    pub fn rule(&self) -> TriangleRule {
        TriangleRule::exact_to(2 * self.degree + 2)
    }

    /// Free part of a full coefficient vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d as usize]).collect()
    }

    /// Full vector from free values and the fixed values of `lift`.
    pub fn expand(&self, free: &[f64], lift: &[f64]) -> Vec<f64> {
        let mut full = lift.to_vec();
        for (i, &d) in self.free_dofs.iter().enumerate() {
            full[d as usize] = free[i];
        }
        full
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.dof_points.iter().map(|&x| f(x)).collect()
    }

    /// Nodal interpolant of `f` on Dirichlet DOFs, zero elsewhere.
    pub fn dirichlet_lift(&self, f: Option<&dyn Fn(Point) -> f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        if let Some(f) = f {
            for (d, k) in self.kinds.iter().enumerate() {
                if *k == DofKind::Dirichlet {
                    out[d] = f(self.dof_points[d]);
                }
            }
        }
        out
    }

    pub fn value_at(&self, coeffs: &[f64], t: usize, l: [f64; 3]) -> f64 {
        let phi = shape_values(self.degree, l);
        self.element_dofs(t)
            .iter()
            .zip(phi)
            .map(|(&d, v)| coeffs[d as usize] * v)
            .sum()
    }

    pub fn grad_at(&self, coeffs: &[f64], t: usize, g: &ElemGeom, l: [f64; 3]) -> [f64; 2] {
        let grads = shape_grads(self.degree, g, l);
        let mut s = [0.0; 2];
        for (&d, gr) in self.element_dofs(t).iter().zip(grads) {
            let c = coeffs[d as usize];
            s[0] += c * gr[0];
            s[1] += c * gr[1];
        }
        s
    }

    pub fn hessian(&self, coeffs: &[f64], t: usize, g: &ElemGeom) -> [[f64; 2]; 2] {
        let h = shape_hessians(self.degree, g);
        let mut s = [[0.0; 2]; 2];
        for (&d, hi) in self.element_dofs(t).iter().zip(h) {
            let c = coeffs[d as usize];
            for r in 0..2 {
                for k in 0..2 {
                    s[r][k] += c * hi[r][k];
                }
            }
        }
        s
    }

    /// Values of a discrete function at arbitrary points of the domain.
    pub fn evaluate(&self, coeffs: &[f64], points: &[Point]) -> Result<Vec<f64>> {
        let mut guess = 0;
        points
            .iter()
            .map(|&x| {
                let t = self.mesh.locate(x, guess).ok_or_else(|| {
                    AfemError::Geometry(format!("point {x:?} lies outside the mesh"))
                })?;
                guess = t;
                Ok(self.value_at(coeffs, t, self.mesh.barycentric(t, x)))
            })
            .collect()
    }

    pub(crate) fn pattern(&self) -> &Pattern {
        self.pattern.get_or_init(|| self.build_pattern())
    }

    fn build_pattern(&self) -> Pattern {
        let nf = self.n_free();
        let nl = self.n_local;
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); nf];
        for t in 0..self.mesh.n_elements() {
            let dofs = self.element_dofs(t);
            for &a in dofs {
                let fa = self.free_index[a as usize];
                if fa == NONE {
                    continue;
                }
                for &b in dofs {
                    let fb = self.free_index[b as usize];
                    if fb != NONE {
                        rows[fa as usize].push(fb);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(nf + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let mut elem_pos = vec![NONE; self.mesh.n_elements() * nl * nl];
        for t in 0..self.mesh.n_elements() {
            let dofs = self.element_dofs(t);
            for (i, &a) in dofs.iter().enumerate() {
                let fa = self.free_index[a as usize];
                if fa == NONE {
                    continue;
                }
                let range = row_ptr[fa as usize]..row_ptr[fa as usize + 1];
                for (j, &b) in dofs.iter().enumerate() {
                    let fb = self.free_index[b as usize];
                    if fb == NONE {
                        continue;
                    }
                    let k = col_idx[range.clone()]
                        .binary_search(&fb)
                        .expect("pattern entry");
                    elem_pos[(t * nl + i) * nl + j] = (range.start + k) as u32;
                }
            }
        }
        let nnz = col_idx.len();
        Pattern {
            csr: CsrMatrix {
                n_rows: nf,
                n_cols: nf,
                row_ptr,
                col_idx,
                values: vec![0.0; nnz],
            },
            elem_pos,
        }
    }
}

/// Interpolates a coarse discrete function into a refined space of the same
/// lineage. The result is exact because the coarse space is nested in the fine one.
pub fn prolongate(coarse: &Space, fine: &Space, coeffs: &[f64]) -> Result<Vec<f64>> {
    if !coarse.mesh.same_lineage(&fine.mesh) {
        return Err(AfemError::Lineage(
            "prolongation between unrelated meshes".into(),
        ));
    }
    if coeffs.len() != coarse.n_dofs() {
        return Err(AfemError::Parameter(
            "coefficient vector has the wrong length".into(),
        ));
    }
    let mut out = vec![f64::NAN; fine.n_dofs()];
    let mut done = vec![false; fine.n_dofs()];
    for t in 0..fine.mesh.n_elements() {
        let dofs = fine.element_dofs(t);
        if dofs.iter().all(|&d| done[d as usize]) {
            continue;
        }
        let a = fine
            .mesh
            .ancestor_in(fine.mesh.triangle(t).v, &coarse.mesh)
            .ok_or_else(|| AfemError::Lineage("fine element has no coarse ancestor".into()))?;
        let g = coarse.geom(a);
        for &d in dofs {
            if !done[d as usize] {
                let l = g.barycentric(fine.dof_points[d as usize]);
                out[d as usize] = coarse.value_at(coeffs, a, l);
                done[d as usize] = true;
            }
        }
    }
    Ok(out)
}

/// Embeds a degree-one function into the degree-two space on the same mesh.
pub fn embed_p1(p1: &Space, p2: &Space, coeffs: &[f64]) -> Vec<f64> {
    let mesh = p2.mesh();
    let mut out = vec![0.0; p2.n_dofs()];
    for &v in mesh.vertices() {
        out[p2.vertex_dof(v).unwrap()] = coeffs[p1.vertex_dof(v).unwrap()];
    }
    for (e, &(a, b)) in mesh.edges().iter().enumerate() {
        out[p2.n_vertex_dofs() + e] =
            0.5 * (coeffs[p1.vertex_dof(a).unwrap()] + coeffs[p1.vertex_dof(b).unwrap()]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{criss_cross, EdgeRule};

    fn mesh() -> Arc<Mesh> {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        Arc::new(Mesh::initial(&p, &t, &[], EdgeRule::LongestEdge).unwrap())
    }

    #[test]
    fn p2_basis_is_nodal() {
        let g = ElemGeom::new([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]);
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ];
        for (i, n) in nodes.iter().enumerate() {
            let v = shape_values(2, *n);
            for (j, vj) in v.iter().enumerate() {
                assert!((vj - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
        // gradients sum to zero (partition of unity)
        let gs = shape_grads(2, &g, [0.2, 0.3, 0.5]);
        let s = gs
            .iter()
            .fold([0.0, 0.0], |a, b| [a[0] + b[0], a[1] + b[1]]);
        assert!(s[0].abs() < 1e-14 && s[1].abs() < 1e-14);
    }

    #[test]
    fn quadratics_are_reproduced() {
        let m = mesh();
        let s = build_space(m.clone(), 2).unwrap();
        let f = |x: Point| 1.0 + x[0] - 2.0 * x[1] + x[0] * x[1] + 3.0 * x[1] * x[1];
        let u = s.interpolate(&f);
        let pts = [[0.13, 0.77], [0.5, 0.5], [0.99, 0.01]];
        for (v, x) in s.evaluate(&u, &pts).unwrap().iter().zip(pts) {
            assert!((v - f(x)).abs() < 1e-13);
        }
        let fine = build_space(Arc::new(m.refine(&[0, 3, 7]).unwrap()), 2).unwrap();
        let uf = prolongate(&s, &fine, &u).unwrap();
        let exact = fine.interpolate(&f);
        for (a, b) in uf.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn dof_counts() {
        let m = mesh();
        let s1 = build_space(m.clone(), 1).unwrap();
        let s2 = build_space(m.clone(), 2).unwrap();
        assert_eq!(s1.n_dofs(), 13);
        assert_eq!(s2.n_dofs(), 13 + m.n_edges());
        assert_eq!(s1.n_free(), 5);
        assert!(build_space(m, 3).is_err());
    }
}
