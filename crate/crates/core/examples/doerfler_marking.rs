//! Minimal-cardinality and binned Dörfler marking on random indicators.
//!
//! `cargo run --release --example doerfler_marking -- [n] [theta]`

use afemkit::estimator::Indicators;
use afemkit::marking::{doerfler_binned, doerfler_min};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let theta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let mut rng = StdRng::seed_from_u64(7);
    // heavy-tailed indicators, as produced by a singularity
    let ind = Indicators {
        values: (0..n).map(|_| rng.gen::<f64>().powi(8)).collect(),
    };
    let total = ind.total().powi(2);
    for (name, marked) in [
        ("minimal", doerfler_min(&ind, theta)?),
        ("binned", doerfler_binned(&ind, theta)?),
    ] {
        let share = ind.subset_total(&marked).powi(2) / total;
        println!(
            "{name:>8}: {:>7} of {n} marked, captured share {share:.4} (theta {theta})",
            marked.len()
        );
    }
    Ok(())
}
