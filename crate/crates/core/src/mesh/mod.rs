//! Conforming triangular meshes refined by newest-vertex bisection.
//!
//! Vertices live in a [`VertexStore`] shared by every mesh of one lineage, so
//! midpoints created by different refinements of the same initial mesh get the
//! same id. A triangle `[v0, v1, v2]` stores its refinement edge as `(v0, v1)`
//! and its newest vertex as `v2`; the ordered triple identifies it uniquely
//! within a lineage and encodes its whole ancestry.

mod io;

pub use io::{read_binary, read_text, write_binary, write_text};

use std::sync::{Arc, RwLock};

use rustc_hash::FxHashMap;

use crate::error::{AfemError, Result};

pub type VertexId = u32;
pub type EdgeKey = (VertexId, VertexId);

pub(crate) const NONE: u32 = u32::MAX;

#[inline]
pub fn edge_key(a: VertexId, b: VertexId) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triangle {
    pub v: [VertexId; 3],
    /// Number of bisections separating this triangle from its root.
    pub generation: u32,
    /// Index of the initial triangle it descends from.
    pub root: u32,
}

/// How [`Mesh::initial`] picks the refinement edge of each input triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeRule {
    /// Longest edge, ties broken by the lexicographically smallest vertex pair.
    LongestEdge,
    /// Keep the input order: `(v0, v1)` is the refinement edge.
    AsGiven,
}

#[derive(Default)]
struct StoreInner {
    points: Vec<[f64; 2]>,
    parents: Vec<Option<EdgeKey>>,
    midpoints: FxHashMap<EdgeKey, VertexId>,
}

impl StoreInner {
    fn midpoint(&mut self, a: VertexId, b: VertexId) -> VertexId {
        let key = edge_key(a, b);
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let (pa, pb) = (self.points[a as usize], self.points[b as usize]);
        let id = self.points.len() as VertexId;
        self.points
            .push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        self.parents.push(Some(key));
        self.midpoints.insert(key, id);
        id
    }
}

/// Append-only vertex storage shared by all meshes of a lineage.
#[derive(Default)]
pub struct VertexStore {
    inner: RwLock<StoreInner>,
}

impl VertexStore {
    pub fn len(&self) -> usize {
        self.inner.read().unwrap().points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Endpoints of the edge whose midpoint is `v`, or `None` for initial vertices.
    pub fn parents(&self, v: VertexId) -> Option<EdgeKey> {
        self.inner.read().unwrap().parents[v as usize]
    }

    fn snapshot(&self) -> Arc<Vec<[f64; 2]>> {
        Arc::new(self.inner.read().unwrap().points.clone())
    }
}

struct Lineage {
    n_roots: usize,
}

/// A conforming triangulation.
#[derive(Clone)]
pub struct Mesh {
    store: Arc<VertexStore>,
    points: Arc<Vec<[f64; 2]>>,
    lineage: Arc<Lineage>,
    triangles: Vec<Triangle>,
    edges: Vec<EdgeKey>,
    edge_tris: Vec<[u32; 2]>,
    edge_boundary: Vec<Option<BoundaryKind>>,
    tri_edges: Vec<[u32; 3]>,
    index: FxHashMap<[VertexId; 3], u32>,
    vertices: Vec<VertexId>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Parent of a non-root triangle, given the edge its newest vertex bisected.
fn parent_of(v: [VertexId; 3], split: EdgeKey) -> [VertexId; 3] {
    let [a, b, _] = v;
    let (p, q) = split;
    if a == p || a == q {
        // second child (v1, v2, m)
        let v0 = if a == p { q } else { p };
        [v0, a, b]
    } else {
        // first child (v2, v0, m)
        let v1 = if b == p { q } else { p };
        [b, v1, a]
    }
}

impl Mesh {
    /// Builds an initial mesh. Boundary edges missing from `boundary` default to Dirichlet.
    pub fn initial(
        points: &[[f64; 2]],
        triangles: &[[usize; 3]],
        boundary: &[([usize; 2], BoundaryKind)],
        rule: EdgeRule,
    ) -> Result<Mesh> {
        if triangles.is_empty() {
            return Err(AfemError::Structure("mesh has no triangles".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(AfemError::Geometry(format!("vertex {i} is not finite")));
            }
        }
        let mut tris = Vec::with_capacity(triangles.len());
        for (ti, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= points.len()) {
                return Err(AfemError::Structure(format!(
                    "triangle {ti} references a missing vertex"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(AfemError::Structure(format!(
                    "triangle {ti} repeats a vertex"
                )));
            }
            let [a, b, c] = t.map(|v| points[v]);
            let area = signed_area(a, b, c);
            let scale = dist2(a, b).max(dist2(b, c)).max(dist2(a, c));
            if area <= 1e-14 * scale {
                return Err(AfemError::Geometry(format!(
                    "triangle {ti} has non-positive area {area:e}"
                )));
            }
            let v = t.map(|x| x as VertexId);
            let ordered = match rule {
                EdgeRule::AsGiven => v,
                EdgeRule::LongestEdge => {
                    let mut best: Option<(f64, EdgeKey, usize)> = None;
                    for i in 0..3 {
                        let (p, q) = (v[(i + 1) % 3], v[(i + 2) % 3]);
                        let len = dist2(points[p as usize], points[q as usize]);
                        let key = edge_key(p, q);
                        let better = match best {
                            None => true,
                            Some((bl, bk, _)) => {
                                len > bl * (1.0 + 1e-12) || (len >= bl * (1.0 - 1e-12) && key < bk)
                            }
                        };
                        if better {
                            best = Some((len, key, i));
                        }
                    }
                    let i = best.unwrap().2;
                    // cyclic rotation keeps the orientation
                    [v[(i + 1) % 3], v[(i + 2) % 3], v[i]]
                }
            };
            tris.push(Triangle {
                v: ordered,
                generation: 0,
                root: ti as u32,
            });
        }

        let mut bmap = FxHashMap::default();
        for &([a, b], kind) in boundary {
            if a >= points.len() || b >= points.len() {
                return Err(AfemError::Structure(
                    "boundary edge references a missing vertex".into(),
                ));
            }
            bmap.insert(edge_key(a as VertexId, b as VertexId), kind);
        }

        // count incidences to find boundary edges and reject non-manifold input
        let mut count: FxHashMap<EdgeKey, u32> = FxHashMap::default();
        for t in &tris {
            for i in 0..3 {
                *count
                    .entry(edge_key(t.v[(i + 1) % 3], t.v[(i + 2) % 3]))
                    .or_default() += 1;
            }
        }
        for (&e, &n) in &count {
            if n > 2 {
                return Err(AfemError::Structure(format!(
                    "edge {e:?} is shared by {n} triangles"
                )));
            }
            if n == 1 {
                bmap.entry(e).or_insert(BoundaryKind::Dirichlet);
            } else if bmap.contains_key(&e) {
                return Err(AfemError::Structure(format!(
                    "interior edge {e:?} carries a boundary marker"
                )));
            }
        }
        for e in bmap.keys() {
            if !count.contains_key(e) {
                return Err(AfemError::Structure(format!(
                    "boundary marker on unknown edge {e:?}"
                )));
            }
        }
        // a vertex inside a boundary edge means two triangles share only part of an edge
        let used: Vec<bool> = {
            let mut u = vec![false; points.len()];
            for t in &tris {
                for &v in &t.v {
                    u[v as usize] = true;
                }
            }
            u
        };
        for &(a, b) in bmap.keys() {
            let (pa, pb) = (points[a as usize], points[b as usize]);
            let len2 = dist2(pa, pb);
            for (vi, p) in points.iter().enumerate() {
                if !used[vi] || vi as u32 == a || vi as u32 == b {
                    continue;
                }
                let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                let t =
                    ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2;
                if cross.abs() <= 1e-12 * len2 && t > 1e-12 && t < 1.0 - 1e-12 {
                    return Err(AfemError::Structure(format!(
                        "vertex {vi} lies inside edge ({a}, {b}); triangles share only part of an edge"
                    )));
                }
            }
        }

        let store = VertexStore::default();
        {
            let mut inner = store.inner.write().unwrap();
            inner.points = points.to_vec();
            inner.parents = vec![None; points.len()];
        }
        let store = Arc::new(store);
        let lineage = Arc::new(Lineage {
            n_roots: tris.len(),
        });
        let pts = store.snapshot();
        Mesh::build(store, pts, lineage, tris, &bmap)
    }

    fn build(
        store: Arc<VertexStore>,
        points: Arc<Vec<[f64; 2]>>,
        lineage: Arc<Lineage>,
        triangles: Vec<Triangle>,
        boundary: &FxHashMap<EdgeKey, BoundaryKind>,
    ) -> Result<Mesh> {
        let mut edge_id: FxHashMap<EdgeKey, u32> = FxHashMap::default();
        edge_id.reserve(triangles.len() * 3 / 2 + 8);
        let mut edges = Vec::with_capacity(triangles.len() * 3 / 2 + 8);
        let mut edge_tris: Vec<[u32; 2]> = Vec::with_capacity(edges.capacity());
        let mut tri_edges = Vec::with_capacity(triangles.len());
        let mut index = FxHashMap::default();
        index.reserve(triangles.len());
        for (ti, t) in triangles.iter().enumerate() {
            let mut te = [0u32; 3];
            for (i, slot) in te.iter_mut().enumerate() {
                let key = edge_key(t.v[(i + 1) % 3], t.v[(i + 2) % 3]);
                let id = *edge_id.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_tris.push([NONE, NONE]);
                    (edges.len() - 1) as u32
                });
                let slots = &mut edge_tris[id as usize];
                if slots[0] == NONE {
                    slots[0] = ti as u32;
                } else if slots[1] == NONE {
                    slots[1] = ti as u32;
                } else {
                    return Err(AfemError::Structure(format!(
                        "edge {key:?} has more than two triangles"
                    )));
                }
                *slot = id;
            }
            tri_edges.push(te);
            if index.insert(t.v, ti as u32).is_some() {
                return Err(AfemError::Structure(format!(
                    "duplicate triangle {:?}",
                    t.v
                )));
            }
        }
        let mut edge_boundary = vec![None; edges.len()];
        for (e, key) in edges.iter().enumerate() {
            let single = edge_tris[e][1] == NONE;
            match boundary.get(key) {
                Some(&k) if single => edge_boundary[e] = Some(k),
                Some(_) => {
                    return Err(AfemError::Structure(format!(
                        "interior edge {key:?} carries a boundary marker"
                    )))
                }
                None if single => {
                    return Err(AfemError::Structure(format!(
                        "hanging node on edge {key:?}"
                    )))
                }
                None => {}
            }
        }
        let mut vertices: Vec<VertexId> = triangles.iter().flat_map(|t| t.v).collect();
        vertices.sort_unstable();
        vertices.dedup();
        Ok(Mesh {
            store,
            points,
            lineage,
            triangles,
            edges,
            edge_tris,
            edge_boundary,
            tri_edges,
            index,
            vertices,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> &Triangle {
        &self.triangles[t]
    }

    /// Sorted global ids of the vertices used by this mesh.
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn point(&self, v: VertexId) -> [f64; 2] {
        self.points[v as usize]
    }

    pub fn store(&self) -> &Arc<VertexStore> {
        &self.store
    }

    /// Number of vertex ids allocated in the shared store when this mesh was built.
    pub fn global_vertex_count(&self) -> usize {
        self.points.len()
    }

    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].v.map(|v| self.points[v as usize])
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    /// Triangles adjacent to edge `e`; the second slot is `None` on the boundary.
    pub fn edge_triangles(&self, e: usize) -> (usize, Option<usize>) {
        let [a, b] = self.edge_tris[e];
        (a as usize, if b == NONE { None } else { Some(b as usize) })
    }

    pub fn edge_boundary(&self, e: usize) -> Option<BoundaryKind> {
        self.edge_boundary[e]
    }

    /// Edge ids of triangle `t`; entry `i` is the edge opposite local vertex `i`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t].map(|e| e as usize)
    }

    /// Neighbour across the edge opposite local vertex `i`.
    pub fn neighbor(&self, t: usize, i: usize) -> Option<usize> {
        let (a, b) = self.edge_triangles(self.tri_edges[t][i] as usize);
        if a == t {
            b
        } else {
            Some(a)
        }
    }

    pub fn find(&self, v: [VertexId; 3]) -> Option<usize> {
        self.index.get(&v).map(|&i| i as usize)
    }

    /// Boundary edges with their markers.
    pub fn boundary_edges(&self) -> impl Iterator<Item = (EdgeKey, BoundaryKind)> + '_ {
        self.edges
            .iter()
            .zip(&self.edge_boundary)
            .filter_map(|(&e, b)| b.map(|k| (e, k)))
    }

    pub fn same_lineage(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.store, &other.store) && Arc::ptr_eq(&self.lineage, &other.lineage)
    }

    /// The triangle that was bisected to produce `v`, or `None` for a root.
    pub fn parent(&self, v: [VertexId; 3]) -> Option<[VertexId; 3]> {
        self.store.parents(v[2]).map(|split| parent_of(v, split))
    }

    /// Walks up from `v` (inclusive) until a triangle of `other` is found.
    pub fn ancestor_in(&self, v: [VertexId; 3], other: &Mesh) -> Option<usize> {
        let inner = self.store.inner.read().unwrap();
        let mut cur = v;
        loop {
            if let Some(&i) = other.index.get(&cur) {
                return Some(i as usize);
            }
            cur = parent_of(cur, inner.parents[cur[2] as usize]?);
        }
    }

    /// Newest-vertex bisection of the marked triangles plus the minimal closure
    /// that keeps the mesh conforming.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh> {
        let ne = self.edges.len();
        let mut mark = vec![false; ne];
        let mut stack = Vec::new();
        for &t in marked {
            if t >= self.triangles.len() {
                return Err(AfemError::Parameter(format!(
                    "marked element {t} out of range"
                )));
            }
            let e = self.tri_edges[t][2] as usize;
            if !mark[e] {
                mark[e] = true;
                stack.push(e);
            }
        }
        if stack.is_empty() {
            return Ok(self.clone());
        }
        while let Some(e) = stack.pop() {
            for &t in &self.edge_tris[e] {
                if t == NONE {
                    continue;
                }
                let r = self.tri_edges[t as usize][2] as usize;
                if !mark[r] {
                    mark[r] = true;
                    stack.push(r);
                }
            }
        }
        let mut mid = vec![NONE; ne];
        {
            let mut inner = self.store.inner.write().unwrap();
            for e in 0..ne {
                if mark[e] {
                    let (a, b) = self.edges[e];
                    mid[e] = inner.midpoint(a, b);
                }
            }
        }
        let mut tris = Vec::with_capacity(self.triangles.len() * 2);
        for (ti, t) in self.triangles.iter().enumerate() {
            let te = self.tri_edges[ti];
            if !mark[te[2] as usize] {
                tris.push(*t);
                continue;
            }
            let [a, b, c] = t.v;
            let m = mid[te[2] as usize];
            let g = t.generation;
            let mk = |v, generation| Triangle {
                v,
                generation,
                root: t.root,
            };
            if mark[te[1] as usize] {
                let m1 = mid[te[1] as usize];
                tris.push(mk([m, c, m1], g + 2));
                tris.push(mk([a, m, m1], g + 2));
            } else {
                tris.push(mk([c, a, m], g + 1));
            }
            if mark[te[0] as usize] {
                let m2 = mid[te[0] as usize];
                tris.push(mk([m, b, m2], g + 2));
                tris.push(mk([c, m, m2], g + 2));
            } else {
                tris.push(mk([b, c, m], g + 1));
            }
        }
        let mut bmap = FxHashMap::default();
        for (e, b) in self.edge_boundary.iter().enumerate() {
            if let Some(kind) = *b {
                let (p, q) = self.edges[e];
                if mark[e] {
                    bmap.insert(edge_key(p, mid[e]), kind);
                    bmap.insert(edge_key(mid[e], q), kind);
                } else {
                    bmap.insert((p, q), kind);
                }
            }
        }
        let points = self.store.snapshot();
        Mesh::build(
            self.store.clone(),
            points,
            self.lineage.clone(),
            tris,
            &bmap,
        )
        .map_err(|e| AfemError::Structure(format!("refinement produced an invalid mesh: {e}")))
    }

    /// Refines every element once.
    pub fn refine_uniform(&self) -> Mesh {
        let all: Vec<usize> = (0..self.n_elements()).collect();
        self.refine(&all).expect("uniform refinement")
    }

    /// Coarsest common refinement of two meshes of the same lineage.
    pub fn overlay(&self, other: &Mesh) -> Result<Mesh> {
        if !self.same_lineage(other) {
            return Err(AfemError::Lineage("overlay of unrelated meshes".into()));
        }
        let mut tris = Vec::new();
        for t in &self.triangles {
            if self.ancestor_in(t.v, other).is_some() {
                tris.push(*t);
            }
        }
        for t in &other.triangles {
            if self.find(t.v).is_none() && other.ancestor_in(t.v, self).is_some() {
                tris.push(*t);
            }
        }
        let mut marks = FxHashMap::default();
        for m in [self, other] {
            marks.extend(m.boundary_edges());
        }
        let mut count: FxHashMap<EdgeKey, u32> = FxHashMap::default();
        for t in &tris {
            for i in 0..3 {
                *count
                    .entry(edge_key(t.v[(i + 1) % 3], t.v[(i + 2) % 3]))
                    .or_default() += 1;
            }
        }
        let mut bmap = FxHashMap::default();
        for (e, n) in count {
            if n == 1 {
                match marks.get(&e) {
                    Some(&k) => {
                        bmap.insert(e, k);
                    }
                    None => {
                        return Err(AfemError::Structure(format!(
                            "hanging node on edge {e:?} of overlay"
                        )))
                    }
                }
            }
        }
        let points = self.store.snapshot();
        Mesh::build(
            self.store.clone(),
            points,
            self.lineage.clone(),
            tris,
            &bmap,
        )
    }

    /// Largest ratio of diameter to inradius over all elements.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.n_elements())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let (ab, bc, ca) = (dist2(a, b).sqrt(), dist2(b, c).sqrt(), dist2(c, a).sqrt());
                let diam = ab.max(bc).max(ca);
                let rho = 2.0 * signed_area(a, b, c) / (ab + bc + ca);
                diam / rho
            })
            .fold(0.0, f64::max)
    }

    /// Counts (common, refined coarse elements, fine elements) between `self`
    /// and a refinement `fine`.
    pub fn lineage_stats(&self, fine: &Mesh) -> Result<LineageStats> {
        if !self.same_lineage(fine) {
            return Err(AfemError::Lineage(
                "meshes come from different initial meshes".into(),
            ));
        }
        let mut common = 0;
        for t in &fine.triangles {
            match fine.ancestor_in(t.v, self) {
                Some(i) if self.triangles[i].v == t.v => common += 1,
                Some(_) => {}
                None => {
                    return Err(AfemError::Lineage(format!(
                        "{:?} has no ancestor in the coarse mesh",
                        t.v
                    )))
                }
            }
        }
        Ok(LineageStats {
            common,
            refined: self.n_elements() - common,
            fine: fine.n_elements(),
        })
    }

    /// Checks conformity: every edge has one or two triangles and single-sided
    /// edges carry boundary markers. Returns the first violation found.
    pub fn check_conforming(&self) -> Result<()> {
        for e in 0..self.edges.len() {
            let single = self.edge_tris[e][1] == NONE;
            if single != self.edge_boundary[e].is_some() {
                return Err(AfemError::Structure(format!(
                    "non-conforming edge {:?}",
                    self.edges[e]
                )));
            }
        }
        Ok(())
    }

    /// Id of the triangle containing `x`, found by walking from `start`.
    pub fn locate(&self, x: [f64; 2], start: usize) -> Option<usize> {
        let mut t = start.min(self.n_elements().saturating_sub(1));
        for _ in 0..self.n_elements() + 3 {
            let l = self.barycentric(t, x);
            let (i, &min) = l
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if min >= -1e-12 {
                return Some(t);
            }
            match self.neighbor(t, i) {
                Some(n) => t = n,
                None => break,
            }
        }
        // walking can fail on non-convex domains; fall back to a scan
        (0..self.n_elements()).find(|&t| self.barycentric(t, x).iter().all(|&l| l >= -1e-12))
    }

    pub fn barycentric(&self, t: usize, x: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let area = signed_area(a, b, c);
        let l0 = signed_area(x, b, c) / area;
        let l1 = signed_area(a, x, c) / area;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Total area of the triangulation.
    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|t| self.area(t)).sum()
    }

    /// Number of triangles in the initial mesh of this lineage.
    pub fn n_roots(&self) -> usize {
        self.lineage.n_roots
    }

    pub fn max_generation(&self) -> u32 {
        self.triangles
            .iter()
            .map(|t| t.generation)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LineageStats {
    pub common: usize,
    pub refined: usize,
    pub fine: usize,
}

/// A structured triangulation of `[x0, x1] x [y0, y1]` with `nx * ny` squares
/// split by both diagonals.
pub fn criss_cross(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nx: usize,
    ny: usize,
) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let mut pts = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            pts.push([
                x0 + (x1 - x0) * i as f64 / nx as f64,
                y0 + (y1 - y0) * j as f64 / ny as f64,
            ]);
        }
    }
    let grid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (
                grid(i, j),
                grid(i + 1, j),
                grid(i + 1, j + 1),
                grid(i, j + 1),
            );
            let m = pts.len();
            pts.push([0.5 * (pts[a][0] + pts[c][0]), 0.5 * (pts[a][1] + pts[c][1])]);
            tris.extend([[a, b, m], [b, c, m], [c, d, m], [d, a, m]]);
        }
    }
    (pts, tris)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Mesh {
        Mesh::initial(
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            &[[0, 1, 2], [0, 2, 3]],
            &[],
            EdgeRule::LongestEdge,
        )
        .unwrap()
    }

    #[test]
    fn longest_edge_is_refinement_edge() {
        let m = square();
        for t in m.triangles() {
            assert_eq!(edge_key(t.v[0], t.v[1]), (0, 2));
        }
    }

    #[test]
    fn refining_one_triangle_closes_neighbour() {
        let m = square();
        let f = m.refine(&[0]).unwrap();
        assert_eq!(f.n_elements(), 4);
        assert_eq!(f.n_vertices(), 5);
        f.check_conforming().unwrap();
        assert!((f.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = square();
        let f = m.refine(&[]).unwrap();
        assert_eq!(f.triangles(), m.triangles());
    }

    #[test]
    fn shared_midpoints_across_branches() {
        let m = square();
        let a = m.refine(&[0]).unwrap();
        let b = m.refine(&[1]).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(m.store().len(), 5);
    }

    #[test]
    fn parent_recovery_matches_bisection() {
        let m = square();
        let f = m.refine(&[0, 1]).unwrap().refine(&[0, 1, 2, 3]).unwrap();
        for t in f.triangles() {
            let p = f.parent(t.v).unwrap();
            assert!(p
                .iter()
                .all(|v| t.v.contains(v) || f.store().parents(t.v[2]).is_some()));
            assert!(f.ancestor_in(t.v, &m).is_some());
        }
    }

    #[test]
    fn rejects_degenerate_and_hanging_input() {
        let flat = Mesh::initial(
            &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            &[[0, 1, 2]],
            &[],
            EdgeRule::LongestEdge,
        );
        assert!(matches!(flat, Err(AfemError::Geometry(_))));
        let hanging = Mesh::initial(
            &[
                [0.0, 0.0],
                [2.0, 0.0],
                [1.0, 1.0],
                [1.0, 0.0],
                [0.5, -1.0],
                [1.5, -1.0],
            ],
            &[[0, 1, 2], [0, 4, 3], [3, 5, 1]],
            &[],
            EdgeRule::LongestEdge,
        );
        assert!(matches!(hanging, Err(AfemError::Structure(_))));
    }

    #[test]
    fn overlay_requires_lineage() {
        let a = square();
        let b = square();
        assert!(matches!(a.overlay(&b), Err(AfemError::Lineage(_))));
    }

    #[test]
    fn overlay_of_branches() {
        let m = square();
        let a = m.refine(&[0]).unwrap();
        let b = m.refine(&[0]).unwrap().refine(&[0]).unwrap();
        let o = a.overlay(&b).unwrap();
        assert_eq!(o.n_elements(), b.n_elements());
        o.check_conforming().unwrap();
    }
}
