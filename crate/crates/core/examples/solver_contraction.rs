//! Per-step contraction of PCG with different preconditioners on an adaptive
//! Kellogg hierarchy.
//!
//! `cargo run --release --example solver_contraction -- [levels]`

use std::sync::Arc;

use afemkit::bench;
use afemkit::estimator::residual_indicators;
use afemkit::fespace::{assemble, build_space};
use afemkit::linsolve::{direct_solve, measure_contraction, Hierarchy, Preconditioner};
use afemkit::marking::doerfler_min;

fn max(q: &[f64]) -> f64 {
    q.iter().cloned().fold(0.0, f64::max)
}

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let levels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let b = bench::kellogg();
    let mut mesh = Arc::new(b.initial_mesh()?);
    let mut hier = Hierarchy::new(mesh.clone(), &b.problem)?;
    println!(
        "{:>5} {:>7} {:>9} {:>9} {:>9}",
        "level", "dofs", "v-cycle", "additive", "jacobi"
    );
    for level in 0..levels {
        let space = build_space(mesh.clone(), 1)?;
        let sys = assemble(&space, &b.problem)?;
        let x0 = vec![0.0; sys.n()];
        let qv = measure_contraction(&sys, Preconditioner::Multilevel(&hier), x0.clone(), 10)?;
        let qa = measure_contraction(&sys, Preconditioner::Additive(&hier), x0.clone(), 10)?;
        let qj = measure_contraction(&sys, Preconditioner::Jacobi, x0, 10)?;
        if level % 3 == 0 {
            println!(
                "{level:>5} {:>7} {:>9.3} {:>9.3} {:>9.3}",
                sys.n(),
                max(&qv),
                max(&qa),
                max(&qj)
            );
        }
        let u = sys.full(&direct_solve(&sys)?);
        let ind = residual_indicators(&space, &u, &b.problem)?;
        let fine = Arc::new(mesh.refine(&doerfler_min(&ind, 0.5)?)?);
        hier.extend(fine.clone())?;
        mesh = fine;
    }
    Ok(())
}
