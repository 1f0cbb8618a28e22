use std::f64::consts::PI;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::Result;
use crate::mesh::{edge_key, BoundaryKind, EdgeRule, Mesh};
use crate::problem::{
    Diffusion, DirichletData, ExactSolution, GoalData, Nonlinearity, Point, ProblemSpec,
    ScalarField, VectorField,
};

/// Collects triangles with vertex deduplication and classifies boundary edges by midpoint.
#[derive(Default)]
pub(crate) struct PatchMesh {
    points: Vec<[f64; 2]>,
    ids: FxHashMap<(i64, i64), usize>,
    tris: Vec<[usize; 3]>,
}

impl PatchMesh {
    fn vertex(&mut self, p: [f64; 2]) -> usize {
        let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        *self.ids.entry(key).or_insert_with(|| {
            self.points.push(p);
            self.points.len() - 1
        })
    }

    /// Counter-clockwise triangle.
    pub fn triangle(&mut self, a: [f64; 2], b: [f64; 2], c: [f64; 2]) {
        let t = [self.vertex(a), self.vertex(b), self.vertex(c)];
        self.tris.push(t);
    }

    /// Square `[x, x + h] x [y, y + h]` split by both diagonals.
    pub fn criss_cross_square(&mut self, x: f64, y: f64, h: f64) {
        let (a, b, c, d) = ([x, y], [x + h, y], [x + h, y + h], [x, y + h]);
        let m = [x + 0.5 * h, y + 0.5 * h];
        self.triangle(a, b, m);
        self.triangle(b, c, m);
        self.triangle(c, d, m);
        self.triangle(d, a, m);
    }

    pub fn build(self, kind: impl Fn(Point) -> BoundaryKind) -> Result<Mesh> {
        let mut count: FxHashMap<(u32, u32), usize> = FxHashMap::default();
        for t in &self.tris {
            for i in 0..3 {
                *count
                    .entry(edge_key(t[i] as u32, t[(i + 1) % 3] as u32))
                    .or_default() += 1;
            }
        }
        let mut boundary: Vec<([usize; 2], BoundaryKind)> = count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|((a, b), _)| {
                let (p, q) = (self.points[a as usize], self.points[b as usize]);
                (
                    [a as usize, b as usize],
                    kind([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]),
                )
            })
            .collect();
        boundary.sort_by_key(|b| b.0);
        Mesh::initial(&self.points, &self.tris, &boundary, EdgeRule::LongestEdge)
    }
}

pub const KELLOGG_A: f64 = 161.447_638_797_588_1;
pub const KELLOGG_ALPHA: f64 = 0.1;
pub const KELLOGG_BETA: f64 = -14.922_565_104_551_52;
pub const KELLOGG_DELTA: f64 = PI / 4.0;

/// Angular part of the Kellogg solution and its derivative in `phi`.
pub fn kellogg_mu(phi: f64) -> (f64, f64) {
    let (a, b, d) = (KELLOGG_ALPHA, KELLOGG_BETA, KELLOGG_DELTA);
    let (c, shift) = if phi < PI / 2.0 {
        (((PI / 2.0 - b) * a).cos(), PI / 2.0 - d)
    } else if phi < PI {
        ((d * a).cos(), PI - b)
    } else if phi < 1.5 * PI {
        ((b * a).cos(), PI + d)
    } else {
        (((PI / 2.0 - d) * a).cos(), 1.5 * PI + b)
    };
    let s = (phi - shift) * a;
    (c * s.cos(), -a * c * s.sin())
}

fn polar(x: Point) -> (f64, f64) {
    let r = x[0].hypot(x[1]);
    let mut phi = x[1].atan2(x[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi = 0.0;
    }
    (r, phi)
}

pub fn kellogg_value(x: Point) -> f64 {
    let (r, phi) = polar(x);
    if r == 0.0 {
        return 0.0;
    }
    r.powf(KELLOGG_ALPHA) * kellogg_mu(phi).0
}

/// Gradient of the Kellogg solution; set to zero at the singular point.
pub fn kellogg_gradient(x: Point) -> [f64; 2] {
    let (r, phi) = polar(x);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let (m, dm) = kellogg_mu(phi);
    let ra = r.powf(KELLOGG_ALPHA - 1.0);
    let (c, s) = (phi.cos(), phi.sin());
    let dr = KELLOGG_ALPHA * ra * m;
    let dphi = ra * dm;
    [dr * c - dphi * s, dr * s + dphi * c]
}

pub fn kellogg_coefficient(x: Point) -> f64 {
    if x[0] * x[1] > 0.0 {
        KELLOGG_A
    } else {
        1.0
    }
}

pub fn kellogg_problem() -> ProblemSpec {
    let exact = ExactSolution {
        value: Arc::new(kellogg_value),
        gradient: Arc::new(kellogg_gradient),
    };
    ProblemSpec::new(
        "kellogg",
        Diffusion::PiecewiseScalar(Arc::new(kellogg_coefficient)),
    )
    .with_dirichlet(DirichletData {
        value: exact.value.clone(),
        gradient: Some(exact.gradient.clone()),
    })
    .with_exact(exact)
}

/// 4 x 4 criss-cross squares on `(-1, 1)^2`; the coefficient interfaces are mesh edges.
pub fn kellogg_mesh() -> Result<Mesh> {
    let mut m = PatchMesh::default();
    for j in 0..4 {
        for i in 0..4 {
            m.criss_cross_square(-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64, 0.5);
        }
    }
    m.build(|_| BoundaryKind::Dirichlet)
}

pub const ZSHAPE_GOAL_REFERENCE: f64 = 1.015_559_272_415_834;

fn in_goal_region(x: Point) -> bool {
    x[0] > -0.5 && x[0] < 0.5 && x[1] > -0.5 && x[1] < 0.5
}

pub fn zshape_problem() -> ProblemSpec {
    let g = VectorField::ElementConstant(Arc::new(|c: Point| {
        if in_goal_region(c) {
            [1.0, 1.0]
        } else {
            [0.0, 0.0]
        }
    }));
    ProblemSpec::poisson("zshape", 1.0).with_goal(GoalData {
        g: None,
        g_vec: Some(g),
        reference: Some(ZSHAPE_GOAL_REFERENCE),
    })
}

/// `(-1, 1)^2` minus the triangle `(0,0), (-1,0), (-1,-1)`, with mesh lines on the
/// boundary of the goal region. Dirichlet on the two slit segments, Neumann elsewhere.
pub fn zshape_mesh() -> Result<Mesh> {
    let mut m = PatchMesh::default();
    for j in 0..4 {
        for i in 0..4 {
            let (x, y) = (-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64);
            if x < 0.0 && y < 0.0 {
                continue;
            }
            m.criss_cross_square(x, y, 0.5);
        }
    }
    // the part of the lower-left quadrant below its diagonal, split into four
    let p = |x: f64, y: f64| [x, y];
    m.triangle(p(-1.0, -1.0), p(-0.5, -1.0), p(-0.5, -0.5));
    m.triangle(p(-0.5, -1.0), p(0.0, -1.0), p(0.0, -0.5));
    m.triangle(p(-0.5, -1.0), p(0.0, -0.5), p(-0.5, -0.5));
    m.triangle(p(-0.5, -0.5), p(0.0, -0.5), p(0.0, 0.0));
    m.build(|c| {
        let on_slit =
            (c[1].abs() < 1e-12 && c[0] < 0.0) || ((c[0] - c[1]).abs() < 1e-12 && c[0] < 0.0);
        if on_slit {
            BoundaryKind::Dirichlet
        } else {
            BoundaryKind::Neumann
        }
    })
}

/// `(-1, 1)^2` minus `[0, 1)^2`, homogeneous Dirichlet boundary.
pub fn lshape_mesh() -> Result<Mesh> {
    let mut m = PatchMesh::default();
    for j in 0..4 {
        for i in 0..4 {
            let (x, y) = (-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64);
            if x >= 0.0 && y >= 0.0 {
                continue;
            }
            m.criss_cross_square(x, y, 0.5);
        }
    }
    m.build(|_| BoundaryKind::Dirichlet)
}

pub const CONVECTION: [f64; 2] = [-10.0, -10.0];

pub fn lshape_convection_problem() -> ProblemSpec {
    ProblemSpec::poisson("lshape_convection", 1.0)
        .with_convection(VectorField::Constant(CONVECTION))
}

/// `mu(t) = 2 + (1 + t)^-2` with growth constants 1.75 and 9.
pub fn benchmark_nonlinearity() -> Nonlinearity {
    Nonlinearity {
        mu: Arc::new(|t| 2.0 + (1.0 + t).powi(-2)),
        dmu: Arc::new(|t| -2.0 * (1.0 + t).powi(-3)),
        antiderivative: Some(Arc::new(|s| 2.0 * s - 1.0 / (1.0 + s) + 1.0)),
        alpha: 1.75,
        lipschitz: 9.0,
    }
}

pub fn lshape_nonlinear_problem() -> ProblemSpec {
    ProblemSpec::quasi_linear("lshape_nonlinear", benchmark_nonlinearity())
        .with_source(ScalarField::Constant(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kellogg_mu_at_zero() {
        let (a, b, d) = (KELLOGG_ALPHA, KELLOGG_BETA, KELLOGG_DELTA);
        let closed = ((PI / 2.0 - b) * a).cos() * ((-PI / 2.0 + d) * a).cos();
        assert!((kellogg_mu(0.0).0 - closed).abs() < 1e-15);
        assert!(
            (kellogg_mu(0.0).0 - -0.078_217_232_520_115_59).abs() < 1e-12,
            "{}",
            kellogg_mu(0.0).0
        );
    }

    #[test]
    fn kellogg_mu_is_continuous() {
        for seam in [PI / 2.0, PI, 1.5 * PI, 2.0 * PI] {
            let left = kellogg_mu(seam - 1e-13).0;
            let right = kellogg_mu(if seam == 2.0 * PI { 0.0 } else { seam }).0;
            assert!(
                (left - right).abs() < 1e-10,
                "seam {seam}: {left} vs {right}"
            );
        }
        assert_eq!(kellogg_value([0.0, 0.0]), 0.0);
    }

    #[test]
    fn kellogg_flux_is_continuous() {
        // a * d(mu)/d(phi) matches across each interface
        for seam in [PI / 2.0, PI, 1.5 * PI, 2.0 * PI] {
            let x_left = [(seam - 1e-9).cos(), (seam - 1e-9).sin()];
            let x_right = [(seam + 1e-9).cos(), (seam + 1e-9).sin()];
            let fl = kellogg_coefficient(x_left) * kellogg_mu(seam - 1e-13).1;
            let fr = kellogg_coefficient(x_right)
                * kellogg_mu(if seam == 2.0 * PI { 0.0 } else { seam }).1;
            assert!(
                (fl - fr).abs() < 1e-6 * fl.abs().max(1.0),
                "seam {seam}: {fl} vs {fr}"
            );
        }
    }

    #[test]
    fn kellogg_gradient_matches_differences() {
        let h = 1e-6;
        for x in [[0.3, 0.4], [-0.7, 0.2], [-0.1, -0.9], [0.8, -0.3]] {
            let g = kellogg_gradient(x);
            let dx =
                (kellogg_value([x[0] + h, x[1]]) - kellogg_value([x[0] - h, x[1]])) / (2.0 * h);
            let dy =
                (kellogg_value([x[0], x[1] + h]) - kellogg_value([x[0], x[1] - h])) / (2.0 * h);
            assert!((g[0] - dx).abs() < 1e-6 && (g[1] - dy).abs() < 1e-6);
        }
    }

    #[test]
    fn meshes_are_valid() {
        let k = kellogg_mesh().unwrap();
        assert_eq!(k.n_elements(), 64);
        assert!((k.total_area() - 4.0).abs() < 1e-14);
        let z = zshape_mesh().unwrap();
        assert!((z.total_area() - 3.5).abs() < 1e-14);
        let dirichlet = z
            .boundary_edges()
            .filter(|e| e.1 == BoundaryKind::Dirichlet)
            .count();
        assert_eq!(dirichlet, 4);
        let l = lshape_mesh().unwrap();
        assert!((l.total_area() - 3.0).abs() < 1e-14);
        for m in [&k, &z, &l] {
            m.check_conforming().unwrap();
        }
    }

    #[test]
    fn nonlinearity_constants() {
        let n = benchmark_nonlinearity();
        assert_eq!((n.mu)(0.0), 3.0);
        assert!(((n.mu)(1e12) - 2.0).abs() < 1e-10);
        // d/ds (mu(s^2) s) over a fine grid stays in [alpha, L]
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..200_000 {
            let s = i as f64 * 1e-4;
            let t = s * s;
            let d = (n.mu)(t) + 2.0 * t * (n.dmu)(t);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        assert!((lo - 1.75).abs() < 1e-6 && (hi - 3.0).abs() < 1e-12 && hi <= n.lipschitz);
        let (a, b) = (0.3, 2.7);
        let m = 20_000;
        let h = (b - a) / m as f64;
        let numeric: f64 = (0..m)
            .map(|i| {
                let x = a + i as f64 * h;
                h / 6.0 * ((n.mu)(x) + 4.0 * (n.mu)(x + 0.5 * h) + (n.mu)(x + h))
            })
            .sum();
        let closed =
            (n.antiderivative.as_ref().unwrap())(b) - (n.antiderivative.as_ref().unwrap())(a);
        assert!((numeric - closed).abs() < 1e-10);
    }
}
