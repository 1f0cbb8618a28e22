//! Adaptive loop on the Kellogg interface problem.
//!
//! `cargo run --release --example kellogg_afem -- [p] [theta] [max_cost]`

use afemkit::afem::{run_afem, AfemParams, StopCriteria};
use afemkit::bench;

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let p = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let theta = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let max_cost = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let b = bench::kellogg();
    let params = AfemParams {
        degree: p,
        theta,
        lambda_alg: 0.01,
        stop: StopCriteria {
            max_cost: Some(max_cost),
            max_dofs: None,
            ..Default::default()
        },
        diagnostics: true,
        ..Default::default()
    };
    let tr = run_afem(b.initial_mesh()?, &b.problem, &params)?;
    println!(
        "{:>4} {:>8} {:>9} {:>12} {:>12} {:>12} {:>4}",
        "ell", "dofs", "cost", "eta", "err", "alg_err", "k"
    );
    for r in tr.finals() {
        println!(
            "{:>4} {:>8} {:>9} {:>12.4e} {:>12.4e} {:>12.4e} {:>4}",
            r.ell,
            r.n_dofs,
            r.cost_dofs,
            r.eta,
            r.err.unwrap_or(f64::NAN),
            r.alg_err.unwrap_or(f64::NAN),
            r.k
        );
    }
    println!(
        "termination: {:?}, time {:.2}s",
        tr.termination,
        tr.total_time()
    );
    println!(
        "estimator rate vs cumulative dofs: {:.3}",
        tr.estimator_rate(0.5)?
    );
    Ok(())
}
