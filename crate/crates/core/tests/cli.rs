//! End-to-end checks of the `afemkit` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afemkit(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afemkit"))
        .args(args)
        .env("AFEMKIT_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("afemkit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Rows of a CSV keyed by header, without the wall-clock column.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| header[i] != "time_s")
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            keep.iter().map(|&i| rec[i].to_string()).collect()
        })
        .collect();
    (keep.iter().map(|&i| header[i].clone()).collect(), rows)
}

fn same_value(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-300),
        _ => a == b,
    }
}

fn assert_matches_golden(args: &[&str], golden: &str) {
    let out = tmp(&format!("{golden}.csv"));
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", out.to_str().unwrap()]);
    let o = afemkit(&full, "2");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h1, r1) = table(&out);
    let (h2, r2) = table(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(golden),
    );
    assert_eq!(h1, h2);
    assert_eq!(r1.len(), r2.len());
    for (i, (a, b)) in r1.iter().zip(&r2).enumerate() {
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(same_value(x, y), "row {i}, column {}: {x} vs {y}", h1[j]);
        }
    }
}

#[test]
fn afem_trace_matches_golden_file() {
    assert_matches_golden(
        &[
            "run",
            "--bench",
            "kellogg",
            "--max-levels",
            "6",
            "--diagnostics",
        ],
        "kellogg_afem_6_levels.csv",
    );
}

#[test]
fn ailfem_trace_matches_golden_file() {
    assert_matches_golden(
        &["run", "--bench", "lshape_nonlinear", "--max-levels", "4"],
        "lshape_ailfem_4_levels.csv",
    );
}

#[test]
fn run_is_independent_of_the_thread_count_and_writes_its_side_outputs() {
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp(&format!("goal-{threads}.csv"));
        let ind = tmp(&format!("ind-{threads}.csv"));
        let man = tmp(&format!("goal-{threads}.json"));
        let o = afemkit(
            &[
                "run",
                "--bench",
                "zshape",
                "--max-levels",
                "5",
                "--out",
                out.to_str().unwrap(),
                "--manifest",
                man.to_str().unwrap(),
                "--dump-indicators",
                ind.to_str().unwrap(),
            ],
            threads,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&man).unwrap()).unwrap();
        assert_eq!(m["benchmark"], "zshape");
        assert_eq!(m["algorithm"], "goafem");
        assert_eq!(m["threads"], threads.parse::<u64>().unwrap());
        assert_eq!(m["summary"]["levels"], 5);
        let (h, rows) = table(&ind);
        assert_eq!(h, ["element", "eta2", "cx", "cy"]);
        assert!(!rows.is_empty());
        tables.push(table(&out));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [
        &["run", "--bench", "nope"][..],
        &["run", "--bench", "kellogg", "--no-such-flag"],
        &["frobnicate"],
        &["run", "--bench", "kellogg", "--theta", "1.5"],
        &["mesh-info"],
    ] {
        let o = afemkit(args, "1");
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn mesh_info_verify_rates_and_sweep_run() {
    let o = afemkit(
        &["mesh-info", "--bench", "lshape_convection", "--refine", "1"],
        "1",
    );
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("area             3.000000000000"), "{text}");
    assert!(text.contains("conforming       yes"));

    let o = afemkit(&["verify", "--instances", "20", "--seed", "3"], "2");
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);

    let o = afemkit(&["rates", "--bench", "kellogg", "--max-dofs", "3000"], "2");
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("rate -0."), "{text}");

    let csv = tmp("sweep.csv");
    let o = afemkit(
        &[
            "sweep",
            "--bench",
            "kellogg",
            "--thetas",
            "0.4,0.6",
            "--lambdas",
            "0.5",
            "--reduction",
            "0.3",
            "--out",
            csv.to_str().unwrap(),
        ],
        "2",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(&csv);
    assert_eq!(h[..3], ["lambda", "theta", "weighted_runtime"]);
    assert_eq!(rows.len(), 2);
}
