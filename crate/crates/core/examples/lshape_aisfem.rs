//! Zarantonello symmetrization on the convection-dominated L-shape problem.
//!
//! `cargo run --release --example lshape_aisfem -- [max_cost] [delta]`

use afemkit::afem::StopCriteria;
use afemkit::bench;
use afemkit::iterlin::{run_aisfem, IterParams};

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let max_cost = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let delta = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let b = bench::lshape_convection();
    let mut params = IterParams::aisfem().with_stop(StopCriteria {
        max_cost: Some(max_cost),
        max_dofs: None,
        ..Default::default()
    });
    params.delta = delta;
    params.afem.lambda_alg = 0.1;
    let tr = run_aisfem(b.initial_mesh()?, &b.problem, &params)?;
    println!(
        "{:>4} {:>8} {:>9} {:>12} {:>4} {:>4}",
        "ell", "dofs", "cost", "eta", "k", "j"
    );
    for r in tr.finals() {
        println!(
            "{:>4} {:>8} {:>9} {:>12.4e} {:>4} {:>4}",
            r.ell, r.n_dofs, r.cost_dofs, r.eta, r.k, r.j
        );
    }
    println!(
        "termination: {:?}, time {:.2}s, max j {}, cap hit {}",
        tr.termination,
        tr.total_time(),
        tr.max_j,
        tr.inner_cap_hit
    );
    println!(
        "estimator rate vs cumulative dofs: {:.3}",
        tr.estimator_rate(0.5)?
    );
    Ok(())
}
