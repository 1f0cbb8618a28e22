//! Goal-oriented adaptivity on the Z-shaped domain.
//!
//! `cargo run --release --example zshape_goafem -- [max_cost]`

use afemkit::afem::{AfemParams, StopCriteria};
use afemkit::bench;
use afemkit::goafem::run_goafem;

fn main() -> afemkit::Result<()> {
    let max_cost = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100_000);
    let b = bench::zshape_goal();
    let params = AfemParams {
        theta: 0.3,
        lambda_alg: 0.7,
        stop: StopCriteria {
            max_cost: Some(max_cost),
            max_dofs: None,
            ..Default::default()
        },
        ..Default::default()
    };
    let tr = run_goafem(b.initial_mesh()?, &b.problem, &params)?;
    println!(
        "{:>4} {:>7} {:>9} {:>11} {:>11} {:>14} {:>11} {:>11}",
        "ell", "dofs", "cost", "eta", "zeta", "goal", "goal_err", "plain_err"
    );
    for r in tr.finals() {
        println!(
            "{:>4} {:>7} {:>9} {:>11.3e} {:>11.3e} {:>14.10} {:>11.3e} {:>11.3e}",
            r.ell,
            r.n_dofs,
            r.cost_dofs,
            r.eta,
            r.zeta,
            r.goal_value,
            r.goal_err.unwrap_or(f64::NAN),
            r.goal_plain_err.unwrap_or(f64::NAN)
        );
    }
    println!(
        "termination: {:?}, time {:.2}s",
        tr.termination,
        tr.records.last().map_or(0.0, |r| r.time_s)
    );
    Ok(())
}
