//! Kačanov linearization on the quasi-linear L-shape problem.
//!
//! `cargo run --release --example lshape_ailfem -- [max_cost]`

use afemkit::afem::StopCriteria;
use afemkit::bench;
use afemkit::iterlin::{run_ailfem, IterParams};

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let max_cost = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let b = bench::lshape_nonlinear();
    let params = IterParams::ailfem().with_stop(StopCriteria {
        max_cost: Some(max_cost),
        max_dofs: None,
        ..Default::default()
    });
    let tr = run_ailfem(b.initial_mesh()?, &b.problem, &params)?;
    println!(
        "{:>4} {:>8} {:>9} {:>12} {:>14} {:>4} {:>9} {:>5}",
        "ell", "dofs", "cost", "eta", "energy", "k", "alpha_min", "J_max"
    );
    for r in tr.finals() {
        println!(
            "{:>4} {:>8} {:>9} {:>12.4e} {:>14.8} {:>4} {:>9.3} {:>5}",
            r.ell,
            r.n_dofs,
            r.cost_dofs,
            r.eta,
            r.energy.unwrap_or(f64::NAN),
            r.k,
            r.alpha_min.unwrap_or(f64::NAN),
            r.j_max.unwrap_or(0)
        );
    }
    println!(
        "termination: {:?}, time {:.2}s, max j {}",
        tr.termination,
        tr.total_time(),
        tr.max_j
    );
    println!(
        "estimator rate vs cumulative dofs: {:.3}",
        tr.estimator_rate(0.5)?
    );
    Ok(())
}
