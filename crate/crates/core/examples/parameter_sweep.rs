//! Weighted cumulative runtime over a small theta x lambda grid.
//!
//! `cargo run --release --example parameter_sweep -- [benchmark] [p]`

use afemkit::bench::{self, SWEEP_REDUCTION};

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("kellogg");
    let p: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let b = bench::benchmark(name)?;
    let mut base = b.default_params(b.algorithm);
    base.afem.degree = p;
    base.afem.stop.max_dofs = None;
    base.afem.stop.max_cost = Some(20_000_000);
    let thetas = [0.1, 0.3, 0.5, 0.7];
    let lambdas = [0.01, 0.1, 0.5];
    let table = bench::sweep(
        &b,
        b.algorithm,
        &base,
        &thetas,
        &lambdas,
        SWEEP_REDUCTION,
        1,
    )?;
    println!("{name}, p = {p}: final eta x runtime until eta/eta_0 < {SWEEP_REDUCTION}");
    print!("{}", table.render());
    Ok(())
}
