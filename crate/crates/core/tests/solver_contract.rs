//! Contraction and a-posteriori control of the preconditioned solver.

mod common;

use std::sync::Arc;

use afemkit::bench;
use afemkit::fespace::{assemble, build_space};
use afemkit::linsolve::{Hierarchy, Pcg, Preconditioner};
use common::{dense_solve, energy_norm, kellogg_sequence, sub};

/// Energy errors and increments of `steps` solver iterations from zero.
fn history(
    pre: Preconditioner<'_>,
    sys: &afemkit::fespace::SparseSystem,
    steps: usize,
) -> (Vec<f64>, Vec<f64>) {
    let exact = dense_solve(&sys.matrix, &sys.rhs);
    let mut pcg = Pcg::new(sys, pre).unwrap();
    let mut s = pcg.start(vec![0.0; sys.n()]).unwrap();
    let mut errs = vec![energy_norm(&sys.matrix, &sub(&exact, &s.x))];
    let mut incs = vec![f64::NAN];
    let floor = 1e-11 * errs[0];
    for _ in 0..steps {
        if *errs.last().unwrap() <= floor {
            break;
        }
        pcg.step(&mut s).unwrap();
        errs.push(energy_norm(&sys.matrix, &sub(&exact, &s.x)));
        incs.push(s.increment);
    }
    (errs, incs)
}

#[test]
fn multilevel_solver_contracts_uniformly_on_adaptive_kellogg_meshes() {
    let b = bench::kellogg();
    let meshes = kellogg_sequence(18, 0.5);
    let mut hier = Hierarchy::new(meshes[0].clone(), &b.problem).unwrap();
    for (level, mesh) in meshes.iter().enumerate() {
        if level > 0 {
            hier.extend(mesh.clone()).unwrap();
        }
        let space = build_space(mesh.clone(), 1).unwrap();
        let sys = assemble(&space, &b.problem).unwrap();
        let (errs, incs) = history(Preconditioner::Multilevel(&hier), &sys, 12);
        let q: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
        let qmax = q.iter().cloned().fold(0.0, f64::max);
        assert!(qmax <= 0.9, "level {level}: contraction {qmax}");
        for k in 1..errs.len() {
            assert!(
                errs[k] <= errs[k - 1] * (1.0 + 1e-12),
                "level {level}: error grew at step {k}"
            );
            // (1 - q) e_{k-1} <= |||x_k - x_{k-1}||| <= (1 + q) e_{k-1}, e_k <= q/(1-q) |||x_k - x_{k-1}|||
            let slack = 1e-10 * errs[0];
            assert!(incs[k] >= (1.0 - qmax) * errs[k - 1] - slack);
            assert!(incs[k] <= (1.0 + qmax) * errs[k - 1] + slack);
            assert!(errs[k] <= qmax / (1.0 - qmax) * incs[k] + slack);
        }
    }
}

#[test]
fn additive_and_jacobi_preconditioners_reduce_the_energy_error_monotonically() {
    let b = bench::kellogg();
    let meshes = kellogg_sequence(8, 0.5);
    let mut hier = Hierarchy::new(meshes[0].clone(), &b.problem).unwrap();
    for m in &meshes[1..] {
        hier.extend(m.clone()).unwrap();
    }
    let mesh: Arc<_> = meshes.last().unwrap().clone();
    let sys = assemble(&build_space(mesh, 1).unwrap(), &b.problem).unwrap();
    for pre in [
        Preconditioner::Additive(&hier),
        Preconditioner::Jacobi,
        Preconditioner::Identity,
    ] {
        let (errs, _) = history(pre, &sys, 40);
        assert!(errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(*errs.last().unwrap() < 0.5 * errs[0]);
    }
}

#[test]
fn exact_preconditioner_converges_in_one_step() {
    let b = bench::kellogg();
    let mesh = kellogg_sequence(4, 0.5).pop().unwrap();
    let sys = assemble(&build_space(mesh, 1).unwrap(), &b.problem).unwrap();
    let (errs, _) = history(Preconditioner::Exact, &sys, 1);
    assert!(errs[1] <= 1e-10 * errs[0]);
}
