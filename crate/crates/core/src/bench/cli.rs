//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::run::{median, run_benchmark, thread_count, with_threads, RunManifest, RunOutput};
use super::sweep::{sweep, SWEEP_REDUCTION};
use super::verify::verify_all;
use super::{benchmark, Algorithm};
use crate::afem::PrecondKind;
use crate::error::{AfemError, Result};
use crate::iterlin::IterParams;
use crate::marking::MarkingStrategy;
use crate::mesh::{read_binary, read_text, write_text, Mesh};

#[derive(Parser, Debug)]
#[command(
    name = "afemkit",
    version,
    about = "Adaptive FEM with inexact solvers on 2D triangular meshes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one benchmark and write its trace CSV.
    Run(RunArgs),
    /// Weighted cumulative runtime over a theta x lambda grid.
    Sweep(SweepArgs),
    /// Counts and shape regularity of a benchmark or mesh file.
    MeshInfo(MeshInfoArgs),
    /// Fit the estimator rate and compare with the optimal one.
    Rates(RatesArgs),
    /// Run the randomized property suites.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precond {
    Multilevel,
    Additive,
    Jacobi,
    Identity,
    Exact,
}

impl From<Precond> for PrecondKind {
    fn from(p: Precond) -> Self {
        match p {
            Precond::Multilevel => PrecondKind::Multilevel,
            Precond::Additive => PrecondKind::Additive,
            Precond::Jacobi => PrecondKind::Jacobi,
            Precond::Identity => PrecondKind::Identity,
            Precond::Exact => PrecondKind::Exact,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Marking {
    Minimal,
    Binned,
}

/// Benchmark, algorithm and parameter overrides shared by the subcommands.
#[derive(Args, Debug, Clone)]
pub struct ParamArgs {
    /// Registered benchmark name.
    #[arg(long)]
    bench: String,
    /// Driver; defaults to the one the benchmark is meant for.
    #[arg(long, value_enum)]
    alg: Option<Algorithm>,
    /// Polynomial degree.
    #[arg(long = "p", default_value_t = 1)]
    degree: usize,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    lambda_alg: Option<f64>,
    /// Outer stopping parameter (lambda_sym or lambda_lin).
    #[arg(long, alias = "lambda-sym", alias = "lambda-lin")]
    lambda_outer: Option<f64>,
    /// Zarantonello damping.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    j_max: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_parser = parse_count::<usize>)]
    max_dofs: Option<usize>,
    /// Cumulative DOF budget.
    #[arg(long, value_parser = parse_count::<u64>)]
    max_cost: Option<u64>,
    #[arg(long)]
    max_levels: Option<usize>,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    precond: Option<Precond>,
    #[arg(long, value_enum)]
    marking: Option<Marking>,
    /// Start every level from the Dirichlet lift.
    #[arg(long)]
    no_nested: bool,
    /// Record errors against direct solves and exact solutions.
    #[arg(long)]
    diagnostics: bool,
}

impl ParamArgs {
    fn resolve(&self) -> Result<(super::Benchmark, Algorithm, IterParams)> {
        let b = benchmark(&self.bench)?;
        let alg = self.alg.unwrap_or(b.algorithm);
        let mut p = b.default_params(alg);
        p.afem.degree = self.degree;
        set(&mut p.afem.theta, self.theta);
        set(&mut p.afem.lambda_alg, self.lambda_alg);
        set(&mut p.lambda_outer, self.lambda_outer);
        set(&mut p.delta, self.delta);
        set(&mut p.alpha_min, self.alpha_min);
        set(&mut p.j_max, self.j_max);
        set(&mut p.rho, self.rho);
        set(&mut p.afem.stop.tau, self.tau);
        if self.max_dofs.is_some() || self.max_cost.is_some() {
            p.afem.stop.max_dofs = self.max_dofs;
        }
        p.afem.stop.max_cost = self.max_cost;
        p.afem.stop.max_levels = self.max_levels;
        p.afem.stop.max_time_s = self.max_time;
        if let Some(pc) = self.precond {
            p.afem.preconditioner = pc.into();
        }
        if let Some(m) = self.marking {
            p.afem.marking = match m {
                Marking::Minimal => MarkingStrategy::Minimal,
                Marking::Binned => MarkingStrategy::Binned,
            };
        }
        p.afem.nested = !self.no_nested;
        p.afem.diagnostics = self.diagnostics;
        p.validate()?;
        Ok((b, alg, p))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Trace CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run manifest; defaults to the trace path with a `.json` extension.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Per-element indicators of the final mesh as CSV.
    #[arg(long)]
    dump_indicators: Option<PathBuf>,
    /// Final mesh in the text format.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Repeat the run and report the median runtime.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.7, 0.5, 0.3, 0.1])]
    thetas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.7, 0.5, 0.3, 0.1])]
    lambdas: Vec<f64>,
    /// Each run stops once eta drops below this fraction of its initial value.
    #[arg(long, default_value_t = SWEEP_REDUCTION)]
    reduction: f64,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Long-format sweep CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MeshInfoArgs {
    /// Registered benchmark whose initial mesh is inspected.
    #[arg(long, conflicts_with = "mesh")]
    bench: Option<String>,
    /// Mesh file (text format, or binary with a `.bin` extension).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Uniform refinements applied before reporting.
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// Write the (refined) mesh in the text format.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RatesArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Fraction of the final iterates (by log cost) used for the fit.
    #[arg(long, default_value_t = 0.5)]
    window: f64,
    /// Allowed distance from the optimal rate.
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random instances per suite.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

/// Parses the arguments, runs the command and maps errors to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> ExitCode {
    let args: Vec<String> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let threads = thread_count();
    match with_threads(threads, || execute(cli.command, &args, threads)) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn execute(cmd: Command, argv: &[String], threads: usize) -> Result<ExitCode> {
    match cmd {
        Command::Run(a) => cmd_run(a, argv, threads),
        Command::Sweep(a) => cmd_sweep(a),
        Command::MeshInfo(a) => cmd_mesh_info(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn cmd_run(a: RunArgs, argv: &[String], threads: usize) -> Result<ExitCode> {
    let (b, alg, params) = a.params.resolve()?;
    let mut times = Vec::new();
    let mut out: Option<RunOutput> = None;
    for i in 0..a.repeat.max(1) {
        let o = run_benchmark(&b, alg, &params)?;
        let s = o.summary();
        log::info!("run {}: {:?} after {:.3}s", i + 1, s.termination, s.time_s);
        times.push(s.time_s);
        out = Some(o);
    }
    let out = out.unwrap();
    let mut outputs = Vec::new();
    match &a.out {
        Some(p) => {
            out.write_csv(create(p)?)?;
            outputs.push(p.display().to_string());
        }
        None => out.write_csv(std::io::stdout().lock())?,
    }
    if let Some(p) = &a.dump_indicators {
        let mut w = create(p)?;
        out.dump_indicators(&mut w)?;
        w.flush()?;
        outputs.push(p.display().to_string());
    }
    if let Some(p) = &a.dump_mesh {
        let mut w = create(p)?;
        write_text(out.mesh(), &mut w)?;
        w.flush()?;
        outputs.push(p.display().to_string());
    }
    let manifest_path = a
        .manifest
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("json")));
    let summary = out.summary();
    let initial = b.initial_mesh()?;
    let manifest = RunManifest {
        tool: "afemkit",
        version: env!("CARGO_PKG_VERSION"),
        command: argv.to_vec(),
        benchmark: b.name.to_string(),
        algorithm: alg,
        initial_mesh: format!(
            "{} ({} triangles, {} vertices)",
            b.description,
            initial.n_elements(),
            initial.n_vertices()
        ),
        params,
        threads,
        repeat: a.repeat.max(1),
        median_time_s: median(&times),
        run_times_s: times,
        rate: out.rate(0.5).ok(),
        expected_rate: b.expected_rate(a.params.degree),
        summary,
        outputs,
    };
    if let Some(p) = manifest_path {
        let mut w = create(&p)?;
        manifest.write(&mut w)?;
        w.flush()?;
    }
    eprintln!(
        "{}: {:?} after {} levels, {} DOFs, estimate {:.4e}, median time {:.3}s",
        manifest.benchmark,
        manifest.summary.termination,
        manifest.summary.levels,
        manifest.summary.final_dofs,
        manifest.summary.final_estimate,
        manifest.median_time_s
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let (b, alg, params) = a.params.resolve()?;
    if !(a.reduction > 0.0 && a.reduction < 1.0) {
        return Err(AfemError::Parameter(format!(
            "reduction {} outside (0, 1)",
            a.reduction
        )));
    }
    let table = sweep(
        &b,
        alg,
        &params,
        &a.thetas,
        &a.lambdas,
        a.reduction,
        a.repeat,
    )?;
    print!("{}", table.render());
    for c in table.cells.iter().filter(|c| !c.reached) {
        eprintln!(
            "warning: theta={} lambda={} stopped by a budget before the reduction",
            c.theta, c.lambda
        );
    }
    if let Some(p) = &a.out {
        table.write_csv(create(p)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mesh_info(a: MeshInfoArgs) -> Result<ExitCode> {
    let mut mesh: Mesh = match (&a.bench, &a.mesh) {
        (Some(name), None) => benchmark(name)?.initial_mesh()?,
        (None, Some(path)) => {
            let r = BufReader::new(File::open(path)?);
            if path.extension().is_some_and(|e| e == "bin") {
                read_binary(r)?
            } else {
                read_text(r)?
            }
        }
        _ => {
            return Err(AfemError::Parameter(
                "give exactly one of --bench and --mesh".into(),
            ))
        }
    };
    for _ in 0..a.refine {
        mesh = mesh.refine_uniform();
    }
    let (mut dirichlet, mut neumann) = (0, 0);
    for (_, kind) in mesh.boundary_edges() {
        match kind {
            crate::mesh::BoundaryKind::Dirichlet => dirichlet += 1,
            crate::mesh::BoundaryKind::Neumann => neumann += 1,
        }
    }
    println!("triangles        {}", mesh.n_elements());
    println!("vertices         {}", mesh.n_vertices());
    println!("edges            {}", mesh.n_edges());
    println!("boundary edges   {dirichlet} Dirichlet, {neumann} Neumann");
    println!("area             {:.12}", mesh.total_area());
    println!("shape regularity {:.6}", mesh.shape_regularity());
    println!("max generation   {}", mesh.max_generation());
    println!(
        "conforming       {}",
        if mesh.check_conforming().is_ok() {
            "yes"
        } else {
            "no"
        }
    );
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        write_text(&mesh, &mut w)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_rates(a: RatesArgs) -> Result<ExitCode> {
    let (b, alg, params) = a.params.resolve()?;
    let out = run_benchmark(&b, alg, &params)?;
    let rate = out.rate(a.window)?;
    let expected = b.expected_rate(params.afem.degree);
    let pass = (rate - expected).abs() <= a.tolerance;
    let s = out.summary();
    println!(
        "{} {:?} p={}: rate {rate:.3}, optimal {expected:.3} +- {} over {} levels ({} cumulative DOFs): {}",
        b.name,
        alg,
        params.afem.degree,
        a.tolerance,
        s.levels,
        s.final_cost_dofs,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let results = verify_all(a.instances, a.seed)?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed;
        println!(
            "{} {:<24} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Non-negative integer that may be written as `100000` or `1e5`.
fn parse_count<T: TryFrom<u64>>(s: &str) -> std::result::Result<T, String> {
    let v = match s.parse::<u64>() {
        Ok(v) => v,
        Err(_) => {
            let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a count"))?;
            if !(x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64) {
                return Err(format!("'{s}' is not a non-negative integer"));
            }
            x as u64
        }
    };
    T::try_from(v).map_err(|_| format!("'{s}' is out of range"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("afemkit").chain(args.iter().copied()))
    }

    #[test]
    fn run_arguments_resolve_to_parameters() {
        let cli = parse(&[
            "run",
            "--bench",
            "kellogg",
            "--alg",
            "afem",
            "--p",
            "2",
            "--theta",
            "0.4",
            "--lambda-alg",
            "0.05",
            "--max-dofs",
            "1e3",
            "--max-cost",
            "250000",
        ])
        .unwrap();
        let Command::Run(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let (b, alg, p) = a.params.resolve().unwrap();
        assert_eq!(b.name, "kellogg");
        assert_eq!(alg, Algorithm::Afem);
        assert_eq!(p.afem.degree, 2);
        assert_eq!(p.afem.theta, 0.4);
        assert_eq!(p.afem.lambda_alg, 0.05);
        assert_eq!(p.afem.stop.max_dofs, Some(1000));
        assert_eq!(p.afem.stop.max_cost, Some(250_000));
        assert!(parse(&["run", "--bench", "kellogg", "--max-cost", "1.5"]).is_err());
    }

    #[test]
    fn unknown_flags_and_benchmarks_are_usage_errors() {
        assert!(parse(&["run", "--bench", "kellogg", "--bogus"]).is_err());
        assert!(parse(&["frobnicate"]).is_err());
        let cli = parse(&["run", "--bench", "nope"]).unwrap();
        let Command::Run(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert!(a.params.resolve().is_err());
    }

    #[test]
    fn sweep_lists_parse_with_commas() {
        let cli = parse(&[
            "sweep",
            "--bench",
            "kellogg",
            "--thetas",
            "0.3,0.5",
            "--lambdas",
            "0.1",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.thetas, vec![0.3, 0.5]);
        assert_eq!(a.lambdas, vec![0.1]);
    }
}
