//! Refinement invariants on random marking sequences.

mod common;

use afemkit::bench::{kellogg_mesh, lshape_mesh, zshape_mesh};
use afemkit::mesh::{read_binary, read_text, write_binary, write_text, Mesh};
use common::conforming;
use proptest::prelude::*;

fn root(which: usize) -> Mesh {
    match which % 3 {
        0 => kellogg_mesh(),
        1 => zshape_mesh(),
        _ => lshape_mesh(),
    }
    .unwrap()
}

/// Marks the elements selected by `picks` (reduced modulo the element count).
fn marks(mesh: &Mesh, picks: &[usize]) -> Vec<usize> {
    let mut m: Vec<usize> = picks.iter().map(|p| p % mesh.n_elements()).collect();
    m.sort_unstable();
    m.dedup();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refinement_is_conforming_nested_and_area_preserving(
        which in 0usize..3,
        steps in prop::collection::vec(prop::collection::vec(0usize..10_000, 1..12), 1..6),
    ) {
        let t0 = root(which);
        let area = t0.total_area();
        let mut cur = t0.clone();
        for picks in &steps {
            let m = marks(&cur, picks);
            let fine = cur.refine(&m).unwrap();
            prop_assert!(conforming(&fine));
            prop_assert!(fine.check_conforming().is_ok());
            prop_assert!((fine.total_area() - area).abs() <= 1e-12 * area);
            for &t in &m {
                prop_assert!(fine.find(cur.triangle(t).v).is_none());
            }
            // every fine element lies in exactly one coarse element with the area halved per generation
            let mut covered = vec![0.0; cur.n_elements()];
            for t in 0..fine.n_elements() {
                let tri = fine.triangle(t);
                let a = fine.ancestor_in(tri.v, &cur).unwrap();
                let gap = tri.generation - cur.triangle(a).generation;
                prop_assert!((fine.area(t) * 2f64.powi(gap as i32) - cur.area(a)).abs() <= 1e-12 * cur.area(a));
                covered[a] += fine.area(t);
            }
            for (a, c) in covered.iter().enumerate() {
                prop_assert!((c - cur.area(a)).abs() <= 1e-12 * cur.area(a));
            }
            prop_assert!(fine.n_elements() >= cur.n_elements() + m.len());
            cur = fine;
        }
    }

    #[test]
    fn overlay_is_a_common_refinement_within_the_count_bound(
        which in 0usize..3,
        a in prop::collection::vec(0usize..10_000, 1..20),
        b in prop::collection::vec(0usize..10_000, 1..20),
        c in prop::collection::vec(0usize..10_000, 1..20),
    ) {
        let t0 = root(which);
        let m1 = t0.refine(&marks(&t0, &a)).unwrap();
        let m1 = m1.refine(&marks(&m1, &c)).unwrap();
        let m2 = t0.refine(&marks(&t0, &b)).unwrap();
        let ov = m1.overlay(&m2).unwrap();
        prop_assert!(conforming(&ov));
        prop_assert!(ov.n_elements() + t0.n_elements() <= m1.n_elements() + m2.n_elements());
        for t in 0..ov.n_elements() {
            let v = ov.triangle(t).v;
            prop_assert!(ov.ancestor_in(v, &m1).is_some());
            prop_assert!(ov.ancestor_in(v, &m2).is_some());
        }
        prop_assert!((ov.total_area() - t0.total_area()).abs() <= 1e-12 * t0.total_area());
    }

    #[test]
    fn text_and_binary_round_trips_preserve_the_mesh(
        which in 0usize..3,
        picks in prop::collection::vec(0usize..10_000, 1..30),
    ) {
        let t0 = root(which);
        let mesh = t0.refine(&marks(&t0, &picks)).unwrap();
        let mut text = Vec::new();
        write_text(&mesh, &mut text).unwrap();
        let mut bin = Vec::new();
        write_binary(&mesh, &mut bin).unwrap();
        for back in [read_text(text.as_slice()).unwrap(), read_binary(bin.as_slice()).unwrap()] {
            prop_assert_eq!(back.n_elements(), mesh.n_elements());
            prop_assert_eq!(back.n_vertices(), mesh.n_vertices());
            let mut a: Vec<[u64; 6]> = (0..mesh.n_elements()).map(|t| key(&mesh, t)).collect();
            let mut b: Vec<[u64; 6]> = (0..back.n_elements()).map(|t| key(&back, t)).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            let kinds = |m: &Mesh| {
                let mut k: Vec<_> = m.boundary_edges().map(|(_, k)| format!("{k:?}")).collect();
                k.sort();
                k
            };
            prop_assert_eq!(kinds(&back), kinds(&mesh));
        }
    }
}

/// Sorted corner coordinates as bit patterns.
fn key(m: &Mesh, t: usize) -> [u64; 6] {
    let mut c = m.corners(t);
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [
        c[0][0].to_bits(),
        c[0][1].to_bits(),
        c[1][0].to_bits(),
        c[1][1].to_bits(),
        c[2][0].to_bits(),
        c[2][1].to_bits(),
    ]
}

#[test]
fn uniform_bisection_sweeps_at_least_double_the_element_count() {
    for which in 0..3 {
        let t0 = root(which);
        let m1 = t0.refine_uniform();
        let m = m1.refine_uniform();
        // exact doubling needs compatible refinement edges, which the criss-cross square has
        if which == 0 {
            assert_eq!(m1.n_elements(), 2 * t0.n_elements());
            assert_eq!(m.n_elements(), 4 * t0.n_elements());
        }
        assert!(m1.n_elements() >= 2 * t0.n_elements());
        assert!(m.n_elements() >= 2 * m1.n_elements());
        assert!(conforming(&m));
        // bisection only produces finitely many shapes
        let bound = t0.shape_regularity().max(m1.shape_regularity());
        assert!(m.refine_uniform().refine_uniform().shape_regularity() <= bound * (1.0 + 1e-12));
    }
}
