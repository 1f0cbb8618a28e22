//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use afemkit::bench;
use afemkit::estimator::residual_indicators;
use afemkit::fespace::{assemble, build_space};
use afemkit::linsolve::direct_solve;
use afemkit::marking::doerfler_min;
use afemkit::mesh::Mesh;
use afemkit::sparse::CsrMatrix;

/// Dense Gaussian elimination with partial pivoting, independent of the
/// library's sparse factorizations.
pub fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_dense();
    let mut x = b.to_vec();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        x.swap(c, p);
        let piv = m[c][c];
        assert!(piv.abs() > 1e-300, "singular matrix");
        for r in c + 1..n {
            let f = m[r][c] / piv;
            if f != 0.0 {
                let (top, bottom) = m.split_at_mut(r);
                for (x, y) in bottom[0][c..].iter_mut().zip(&top[c][c..]) {
                    *x -= f * y;
                }
                x[r] -= f * x[c];
            }
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (x[c] - s) / m[c][c];
    }
    x
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn energy_norm(a: &CsrMatrix, x: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    x.iter()
        .zip(&ax)
        .map(|(u, v)| u * v)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Meshes of an adaptive Kellogg run with exact discrete solves and minimal
/// Dörfler marking, starting from the initial mesh.
pub fn kellogg_sequence(levels: usize, theta: f64) -> Vec<Arc<Mesh>> {
    let b = bench::kellogg();
    let mut mesh = Arc::new(b.initial_mesh().unwrap());
    let mut out = vec![mesh.clone()];
    for _ in 1..levels {
        let space = build_space(mesh.clone(), 1).unwrap();
        let sys = assemble(&space, &b.problem).unwrap();
        let u = sys.full(&direct_solve(&sys).unwrap());
        let ind = residual_indicators(&space, &u, &b.problem).unwrap();
        mesh = Arc::new(mesh.refine(&doerfler_min(&ind, theta).unwrap()).unwrap());
        out.push(mesh.clone());
    }
    out
}

/// Least-squares slope of `log y` over `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Independent conformity oracle: every interior edge is shared by exactly two
/// triangles and no vertex lies in the interior of another triangle's edge.
pub fn conforming(mesh: &Mesh) -> bool {
    let mut count: HashMap<(u32, u32), usize> = HashMap::new();
    for t in mesh.triangles() {
        for i in 0..3 {
            let (a, b) = (t.v[i], t.v[(i + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    if count.values().any(|&c| c > 2) {
        return false;
    }
    // a hanging node sits at the midpoint of some edge that is still present
    let pts: HashSet<(u64, u64)> = mesh
        .vertices()
        .iter()
        .map(|&v| {
            let p = mesh.point(v);
            (p[0].to_bits(), p[1].to_bits())
        })
        .collect();
    count.keys().all(|&(a, b)| {
        let (pa, pb) = (mesh.point(a), mesh.point(b));
        let m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        !pts.contains(&(m[0].to_bits(), m[1].to_bits()))
    })
}
