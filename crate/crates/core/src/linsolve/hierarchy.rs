//! Level data for the local multilevel preconditioners.
//!
//! Every refinement adds one level holding the new vertices with their parent
//! edges and the local smoothing set: vertices of the elements that were created
//! by the refinement, together with the rows of that level's stiffness matrix
//! for those vertices. Work per application is linear in the number of unknowns
//! because the smoothing sets of all levels together touch each element at most
//! twice.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use super::direct::DenseCholesky;
use crate::error::{AfemError, Result};
use crate::fespace::{assemble_energy, build_space};
use crate::mesh::{BoundaryKind, Mesh, VertexId, NONE};
use crate::problem::{Diffusion, ProblemSpec};

const DENSE_COARSE: usize = 1500;

/// Jacobi damping of the V-cycle smoother. Below `2/3`, which keeps the local
/// smoother contractive for P1 stiffness matrices.
const OMEGA: f64 = 0.6;

enum Coarse {
    Dense(DenseCholesky),
    Sparse(faer::sparse::linalg::solvers::Llt<usize, f64>),
}

struct Level {
    /// `(m, p, q)`: vertex `m` is the midpoint of `(p, q)`; sorted by `m`.
    new: Vec<[VertexId; 3]>,
    smooth: Vec<VertexId>,
    inv_diag: Vec<f64>,
    /// Rows of the level stiffness matrix for the smoothing set, columns by global id.
    row_ptr: Vec<usize>,
    cols: Vec<VertexId>,
    vals: Vec<f64>,
}

/// Multilevel hierarchy indexed by global vertex ids of a mesh lineage.
pub struct Hierarchy {
    diffusion: Diffusion,
    coarse_free: Vec<VertexId>,
    coarse: Coarse,
    levels: Vec<Level>,
    dirichlet: Vec<bool>,
    present: Vec<bool>,
    mesh: Arc<Mesh>,
}

/// Scratch buffers for [`Hierarchy::apply`].
#[derive(Default)]
pub struct HierarchyWork {
    w: Vec<f64>,
    saved: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    res: Vec<f64>,
    coarse: Vec<f64>,
}

fn dirichlet_flags(mesh: &Mesh) -> Vec<bool> {
    let mut d = vec![false; mesh.global_vertex_count()];
    for ((a, b), k) in mesh.boundary_edges() {
        if k == BoundaryKind::Dirichlet {
            d[a as usize] = true;
            d[b as usize] = true;
        }
    }
    d
}

impl Hierarchy {
    /// Coarse level on `mesh` for the energy scalar product of `problem`.
    pub fn new(mesh: Arc<Mesh>, problem: &ProblemSpec) -> Result<Self> {
        let space = build_space(mesh.clone(), 1)?;
        let a = assemble_energy(&space, problem);
        let coarse_free: Vec<VertexId> = space
            .free_dofs()
            .iter()
            .map(|&d| mesh.vertices()[d as usize])
            .collect();
        let n = coarse_free.len();
        let coarse = if n <= DENSE_COARSE {
            Coarse::Dense(DenseCholesky::new(&a.to_dense())?)
        } else {
            let mut trips = Vec::new();
            for i in 0..n {
                for (j, v) in a.row(i) {
                    if j <= i {
                        trips.push(Triplet::new(i, j, v));
                    }
                }
            }
            let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
                .map_err(|e| AfemError::Singular(format!("{e:?}")))?;
            Coarse::Sparse(
                m.sp_cholesky(Side::Lower)
                    .map_err(|e| AfemError::NotSpd(format!("{e:?}")))?,
            )
        };
        let mut present = vec![false; mesh.global_vertex_count()];
        for &v in mesh.vertices() {
            present[v as usize] = true;
        }
        Ok(Hierarchy {
            diffusion: problem.energy_diffusion(),
            coarse_free,
            coarse,
            levels: Vec::new(),
            dirichlet: dirichlet_flags(&mesh),
            present,
            mesh,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Number of global vertex slots an input vector must have.
    pub fn n_global(&self) -> usize {
        self.present.len()
    }

    pub fn is_dirichlet(&self, v: VertexId) -> bool {
        self.dirichlet[v as usize]
    }

    /// Appends the level for a refinement `fine` of the current finest mesh.
    pub fn extend(&mut self, fine: Arc<Mesh>) -> Result<()> {
        if !self.mesh.same_lineage(&fine) {
            return Err(AfemError::Lineage(
                "hierarchy extended with an unrelated mesh".into(),
            ));
        }
        let ng = fine.global_vertex_count();
        self.present.resize(ng, false);
        self.dirichlet = dirichlet_flags(&fine);
        let store = fine.store().clone();
        let mut new = Vec::new();
        for &v in fine.vertices() {
            if !self.present[v as usize] {
                let (p, q) = store.parents(v).ok_or_else(|| {
                    AfemError::Lineage(format!("vertex {v} of the fine mesh has no parents"))
                })?;
                new.push([v, p, q]);
                self.present[v as usize] = true;
            }
        }
        // mark and collect vertices of elements that are not in the coarse mesh
        let mut slot = vec![NONE; ng];
        let mut smooth = Vec::new();
        for t in fine.triangles() {
            if self.mesh.find(t.v).is_none() {
                for &v in &t.v {
                    if !self.dirichlet[v as usize] && slot[v as usize] == NONE {
                        slot[v as usize] = 0;
                        smooth.push(v);
                    }
                }
            }
        }
        smooth.sort_unstable();
        for (i, &v) in smooth.iter().enumerate() {
            slot[v as usize] = i as u32;
        }
        let mut rows: Vec<Vec<(VertexId, f64)>> = vec![Vec::new(); smooth.len()];
        for t in 0..fine.n_elements() {
            let v = fine.triangle(t).v;
            if v.iter().all(|&x| slot[x as usize] == NONE) {
                continue;
            }
            let g = crate::fespace::ElemGeom::new(fine.corners(t));
            let a = self.diffusion.eval(g.centroid, g.centroid);
            for (i, &x) in v.iter().enumerate() {
                let s = slot[x as usize];
                if s == NONE {
                    continue;
                }
                let gi = g.grad_l[i];
                let agi = [
                    a[0][0] * gi[0] + a[0][1] * gi[1],
                    a[1][0] * gi[0] + a[1][1] * gi[1],
                ];
                for (j, &y) in v.iter().enumerate() {
                    if !self.dirichlet[y as usize] {
                        let gj = g.grad_l[j];
                        rows[s as usize].push((y, g.area * (agi[0] * gj[0] + agi[1] * gj[1])));
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        let mut inv_diag = Vec::with_capacity(smooth.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            let d = (start..cols.len())
                .find(|&k| cols[k] == smooth[i])
                .map(|k| vals[k])
                .unwrap_or(0.0);
            inv_diag.push(1.0 / d);
            row_ptr.push(cols.len());
        }
        self.levels.push(Level {
            new,
            smooth,
            inv_diag,
            row_ptr,
            cols,
            vals,
        });
        self.mesh = fine;
        Ok(())
    }

    /// Abstract work units of one additive application.
    pub fn ops_per_apply(&self) -> u64 {
        let n = self.coarse_free.len() as u64;
        let levels: u64 = self
            .levels
            .iter()
            .map(|l| (2 * l.smooth.len() + 4 * l.new.len()) as u64)
            .sum();
        2 * self.present.len() as u64 + levels + n * n
    }

    /// Abstract work units of one V-cycle.
    pub fn ops_per_cycle(&self) -> u64 {
        let n = self.coarse_free.len() as u64;
        let levels: u64 = self
            .levels
            .iter()
            .map(|l| (4 * l.vals.len() + 6 * l.smooth.len() + 4 * l.new.len()) as u64)
            .sum();
        2 * self.present.len() as u64 + levels + n * n
    }

    fn coarse_solve(&self, w: &[f64], z: &mut [f64], work: &mut Vec<f64>) {
        work.clear();
        work.extend(self.coarse_free.iter().map(|&v| w[v as usize]));
        match &self.coarse {
            Coarse::Dense(c) => c.solve_in_place(work),
            Coarse::Sparse(llt) => {
                let rhs = faer::Col::<f64>::from_fn(work.len(), |i| work[i]);
                let x = llt.solve(&rhs);
                for (i, c) in work.iter_mut().enumerate() {
                    *c = x[i];
                }
            }
        }
        for (&v, &c) in self.coarse_free.iter().zip(work.iter()) {
            z[v as usize] = c;
        }
    }

    /// Symmetric multiplicative V-cycle with one damped Jacobi sweep on each
    /// local smoothing set before and after the coarse correction.
    /// Same conventions as [`Hierarchy::apply`].
    pub fn vcycle(&self, r: &[f64], z: &mut [f64], work: &mut HierarchyWork) {
        let ng = self.present.len();
        debug_assert!(r.len() >= ng && z.len() >= ng);
        work.w.clear();
        work.w.extend_from_slice(&r[..ng]);
        work.saved.resize_with(self.levels.len(), Vec::new);
        work.pre.resize_with(self.levels.len(), Vec::new);
        let w = &mut work.w;
        for (li, level) in self.levels.iter().enumerate().rev() {
            let (saved, pre) = (&mut work.saved[li], &mut work.pre[li]);
            saved.clear();
            saved.extend(level.smooth.iter().map(|&v| w[v as usize]));
            pre.clear();
            pre.extend(
                saved
                    .iter()
                    .zip(&level.inv_diag)
                    .map(|(s, d)| OMEGA * s * d),
            );
            // w -= A e, using symmetry of the level matrix
            for (i, e) in pre.iter().enumerate() {
                for k in level.row_ptr[i]..level.row_ptr[i + 1] {
                    w[level.cols[k] as usize] -= level.vals[k] * e;
                }
            }
            for &[m, p, q] in level.new.iter().rev() {
                let h = 0.5 * w[m as usize];
                w[p as usize] += h;
                w[q as usize] += h;
            }
        }
        z[..ng].iter_mut().for_each(|x| *x = 0.0);
        self.coarse_solve(w, z, &mut work.coarse);
        for (li, level) in self.levels.iter().enumerate() {
            for &[m, p, q] in &level.new {
                z[m as usize] = if self.dirichlet[m as usize] {
                    0.0
                } else {
                    0.5 * (z[p as usize] + z[q as usize])
                };
            }
            for (&v, e) in level.smooth.iter().zip(&work.pre[li]) {
                z[v as usize] += e;
            }
            work.res.clear();
            for (i, s) in work.saved[li].iter().enumerate() {
                let az: f64 = (level.row_ptr[i]..level.row_ptr[i + 1])
                    .map(|k| level.vals[k] * z[level.cols[k] as usize])
                    .sum();
                work.res.push(s - az);
            }
            for ((&v, d), res) in level.smooth.iter().zip(&level.inv_diag).zip(&work.res) {
                z[v as usize] += OMEGA * d * res;
            }
        }
    }

    /// Additive (BPX-type) application `z = B r` for vectors indexed by global vertex id. Entries of `r` at
    /// Dirichlet vertices are ignored and `z` vanishes there.
    pub fn apply(&self, r: &[f64], z: &mut [f64], work: &mut HierarchyWork) {
        let ng = self.present.len();
        debug_assert!(r.len() >= ng && z.len() >= ng);
        work.w.clear();
        work.w.extend_from_slice(&r[..ng]);
        work.saved.resize_with(self.levels.len(), Vec::new);
        let w = &mut work.w;
        for (li, level) in self.levels.iter().enumerate().rev() {
            let saved = &mut work.saved[li];
            saved.clear();
            saved.extend(
                level
                    .smooth
                    .iter()
                    .zip(&level.inv_diag)
                    .map(|(&v, d)| w[v as usize] * d),
            );
            for &[m, p, q] in level.new.iter().rev() {
                let h = 0.5 * w[m as usize];
                w[p as usize] += h;
                w[q as usize] += h;
            }
        }
        z[..ng].iter_mut().for_each(|x| *x = 0.0);
        self.coarse_solve(w, z, &mut work.coarse);
        for (li, level) in self.levels.iter().enumerate() {
            for &[m, p, q] in &level.new {
                z[m as usize] = if self.dirichlet[m as usize] {
                    0.0
                } else {
                    0.5 * (z[p as usize] + z[q as usize])
                };
            }
            for (&v, c) in level.smooth.iter().zip(&work.saved[li]) {
                z[v as usize] += c;
            }
        }
    }
}
