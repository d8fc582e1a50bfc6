//! Command-line front end: generate model problems, solve systems with the
//! hierarchical preconditioner inside PCG/GMRES, run the verification
//! suites, and run scaling benchmarks. Every command prints one JSON
//! object on stdout with top-level keys `{status, config, report, error?}`;
//! diagnostics go to stderr.
//!
//! Exit codes: `0` success (solve: converged; verify: all checks passed),
//! `1` ran but did not meet its goal (solve: not converged; verify: a
//! check failed), `2` usage, parse, or factorization failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hfact::{hierarchical_factor, Partitioner, SolverConfig};
use crate::kernels::EpsMode;
use crate::krylov::{gmres, ic0_auto, pcg, IdentityPrecond, Preconditioner, SolveReport};
use crate::partition::load_colmap;
use crate::problems::{gen_aniso2d, gen_extruded3d, BottomBc};
use crate::sparse::{load_coords, load_matrix_market, save_coords, save_matrix_market};
use crate::verify::{
    exactness_study, run_error_bound_trials, scaling_study, FamilySpec, PrecondSpec,
};

/// Sparse SPD hierarchical solver: approximate multilevel Cholesky by
/// scaled low-rank elimination, used directly or as a PCG/GMRES
/// preconditioner.
#[derive(Debug, Parser)]
#[command(name = "hsolver", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a model problem and write <prefix>.mtx (+ .coords, .colmap).
    Generate(GenerateArgs),
    /// Solve a MatrixMarket system and report convergence as JSON.
    Solve(SolveArgs),
    /// Run a verification suite; exit 0 iff every check passes.
    Verify(VerifyArgs),
    /// Run factor+PCG across a refinement family and report growth.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Aniso2d,
    Extruded3d,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Problem family.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Output path prefix; files get .mtx/.coords/.colmap extensions.
    #[arg(long)]
    out: PathBuf,
    /// aniso2d: grid size n (dimension n²).
    #[arg(long)]
    n: Option<usize>,
    /// aniso2d: anisotropy ratio ε in −ε·u_xx − u_yy.
    #[arg(long, default_value_t = 1e-4)]
    eps_aniso: f64,
    /// extruded3d: horizontal grid extent in x.
    #[arg(long)]
    nx: Option<usize>,
    /// extruded3d: horizontal grid extent in y.
    #[arg(long)]
    ny: Option<usize>,
    /// extruded3d: number of vertical layers.
    #[arg(long)]
    layers: Option<usize>,
    /// extruded3d: vertical/horizontal coupling ratio.
    #[arg(long, default_value_t = 1e3)]
    vert_weight: f64,
    /// extruded3d: fraction of columns with a Neumann bottom.
    #[arg(long, default_value_t = 0.0)]
    neumann_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PartitionerArg {
    General,
    Extruded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EpsModeArg {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KrylovArg {
    Pcg,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecondArg {
    Hsolver,
    Ic0,
    None,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// MatrixMarket file with the SPD system matrix.
    matrix: PathBuf,
    /// Right-hand side, one value per line. Absent: b = A·1.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Node coordinates (x y z per line) to guide partitioning.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Truncation tolerance of the hierarchical factorization.
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    /// Whether --eps is absolute or relative to each block's largest
    /// singular value.
    #[arg(long, value_enum, default_value_t = EpsModeArg::Relative)]
    eps_mode: EpsModeArg,
    /// Target partition cluster size.
    #[arg(long, default_value_t = 100)]
    cluster_size: usize,
    /// Coarse systems at most this large are factored densely.
    #[arg(long, default_value_t = 500)]
    stop_size: usize,
    /// Disable the pre-truncation scaling (deferred compression).
    #[arg(long)]
    no_dc: bool,
    #[arg(long, value_enum, default_value_t = PartitionerArg::General)]
    partitioner: PartitionerArg,
    /// Column map file (index column per line); required by --partitioner
    /// extruded.
    #[arg(long)]
    colmap: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KrylovArg::Pcg)]
    krylov: KrylovArg,
    /// GMRES restart length.
    #[arg(long, default_value_t = 200)]
    restart: usize,
    /// Relative residual stopping tolerance.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Maximum Krylov iterations.
    #[arg(long, default_value_t = 1000)]
    maxit: usize,
    #[arg(long, value_enum, default_value_t = PrecondArg::Hsolver)]
    precond: PrecondArg,
    /// Echoed into the report for bookkeeping; the solve itself is
    /// deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    /// Randomized Schur-error trials: truncation bounds, the ‖E_ww‖ = tail²
    /// identity, PSD structure, and scaled-vs-unscaled dominance.
    Props,
    /// SPD corollary: the scaled scheme's approximate Schur ww block stays
    /// SPD and its error block stays PSD.
    Corollary,
    /// Zero-tolerance factorization reproduces the dense direct solution.
    Exactness,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// props/corollary: number of random block systems (default 200);
    /// exactness: number of random SPD matrices (default 5).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    family: KindArg,
    /// aniso2d: comma-separated grid sizes, e.g. 32,64,128.
    /// extruded3d: comma-separated nxXnyXnz triples, e.g. 16x16x8,32x32x8.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 1e-4)]
    eps_aniso: f64,
    #[arg(long, default_value_t = 1e3)]
    vert_weight: f64,
    #[arg(long, default_value_t = 0.0)]
    neumann_fraction: f64,
    #[arg(long, value_enum, default_value_t = PrecondArg::Hsolver)]
    precond: PrecondArg,
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = EpsModeArg::Relative)]
    eps_mode: EpsModeArg,
    #[arg(long)]
    no_dc: bool,
    #[arg(long, default_value_t = 100)]
    cluster_size: usize,
    #[arg(long, default_value_t = 500)]
    stop_size: usize,
    /// Defaults by family: aniso2d → general, extruded3d → extruded.
    #[arg(long, value_enum)]
    partitioner: Option<PartitionerArg>,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    maxit: usize,
}

impl From<EpsModeArg> for EpsMode {
    fn from(v: EpsModeArg) -> Self {
        match v {
            EpsModeArg::Absolute => EpsMode::Absolute,
            EpsModeArg::Relative => EpsMode::Relative,
        }
    }
}

impl From<PartitionerArg> for Partitioner {
    fn from(v: PartitionerArg) -> Self {
        match v {
            PartitionerArg::General => Partitioner::General,
            PartitionerArg::Extruded => Partitioner::Extruded,
        }
    }
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap renders its own message and uses exit code 2 for usage
        // errors (0 for --help/--version).
        Err(e) => e.exit(),
    };
    match cli.command {
        Command::Generate(args) => emit(cmd_generate(&args), &generate_config(&args)),
        Command::Solve(args) => {
            let config = solve_config(&args);
            match cmd_solve(&args) {
                Ok((report, converged)) => {
                    print_json(&json!({
                        "status": if converged { "converged" } else { "not_converged" },
                        "config": config,
                        "report": report,
                    }));
                    if converged {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => emit_error(&e, &config),
            }
        }
        Command::Verify(args) => {
            let config = verify_config(&args);
            match cmd_verify(&args) {
                Ok((report, passed)) => {
                    print_json(&json!({
                        "status": if passed { "pass" } else { "fail" },
                        "config": config,
                        "report": report,
                    }));
                    if passed {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => emit_error(&e, &config),
            }
        }
        Command::Bench(args) => {
            let config = bench_config(&args);
            match cmd_bench(&args) {
                Ok(report) => {
                    print_json(&json!({
                        "status": "ok",
                        "config": config,
                        "report": report,
                    }));
                    0
                }
                Err(e) => emit_error(&e, &config),
            }
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn emit(result: Result<serde_json::Value>, config: &serde_json::Value) -> i32 {
    match result {
        Ok(report) => {
            print_json(&json!({
                "status": "ok",
                "config": config,
                "report": report,
            }));
            0
        }
        Err(e) => emit_error(&e, config),
    }
}

fn emit_error(e: &Error, config: &serde_json::Value) -> i32 {
    print_json(&json!({
        "status": "error",
        "config": config,
        "report": null,
        "error": { "kind": error_kind(e), "message": e.to_string() },
    }));
    2
}

/// Variant name of the error, for machine-readable triage.
fn error_kind(e: &Error) -> String {
    let debug = format!("{e:?}");
    debug
        .split(|c: char| c == ' ' || c == '{' || c == '(')
        .next()
        .unwrap_or("Error")
        .to_string()
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn generate_config(args: &GenerateArgs) -> serde_json::Value {
    json!({
        "command": "generate",
        "kind": format!("{:?}", args.kind).to_lowercase(),
        "out": args.out.display().to_string(),
        "n": args.n,
        "eps_aniso": args.eps_aniso,
        "nx": args.nx,
        "ny": args.ny,
        "layers": args.layers,
        "vert_weight": args.vert_weight,
        "neumann_fraction": args.neumann_fraction,
    })
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    prefix.with_file_name(name)
}

fn cmd_generate(args: &GenerateArgs) -> Result<serde_json::Value> {
    let (a, colmap) = match args.kind {
        KindArg::Aniso2d => {
            let n = args
                .n
                .ok_or_else(|| Error::invalid("aniso2d requires --n"))?;
            (gen_aniso2d(n, args.eps_aniso)?, None)
        }
        KindArg::Extruded3d => {
            let (nx, ny, layers) = match (args.nx, args.ny, args.layers) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::invalid(
                        "extruded3d requires --nx, --ny, and --layers",
                    ))
                }
            };
            let bc = if args.neumann_fraction > 0.0 {
                BottomBc::NeumannFraction(args.neumann_fraction)
            } else {
                BottomBc::Dirichlet
            };
            let (a, colmap) = gen_extruded3d(nx, ny, layers, args.vert_weight, bc)?;
            (a, Some(colmap))
        }
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }

    let mut files = Vec::new();
    let mtx = with_extension(&args.out, "mtx");
    save_matrix_market(&a, &mtx)?;
    files.push(mtx.display().to_string());

    if let Some(coords) = a.coords() {
        let path = with_extension(&args.out, "coords");
        save_coords(coords, &path)?;
        files.push(path.display().to_string());
    }
    if let Some(map) = &colmap {
        let path = with_extension(&args.out, "colmap");
        crate::partition::save_colmap(map, &path)?;
        files.push(path.display().to_string());
    }

    Ok(json!({
        "files": files,
        "dim": a.dim(),
        "nnz": a.nnz(),
    }))
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn solve_config(args: &SolveArgs) -> serde_json::Value {
    json!({
        "command": "solve",
        "matrix": args.matrix.display().to_string(),
        "rhs": args.rhs.as_ref().map(|p| p.display().to_string()),
        "coords": args.coords.as_ref().map(|p| p.display().to_string()),
        "eps": args.eps,
        "eps_mode": format!("{:?}", args.eps_mode).to_lowercase(),
        "cluster_size": args.cluster_size,
        "stop_size": args.stop_size,
        "dc": !args.no_dc,
        "partitioner": format!("{:?}", args.partitioner).to_lowercase(),
        "colmap": args.colmap.as_ref().map(|p| p.display().to_string()),
        "krylov": format!("{:?}", args.krylov).to_lowercase(),
        "restart": args.restart,
        "tol": args.tol,
        "maxit": args.maxit,
        "precond": format!("{:?}", args.precond).to_lowercase(),
        "seed": args.seed,
    })
}

/// Loads a whitespace/line separated vector of floats; `%`/`#` lines are
/// comments.
fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut v = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| {
                Error::invalid(format!(
                    "{}:{}: not a number: {tok:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            v.push(x);
        }
    }
    Ok(v)
}

fn cmd_solve(args: &SolveArgs) -> Result<(SolveReport, bool)> {
    let mut a = load_matrix_market(&args.matrix)?;
    if let Some(coords_path) = &args.coords {
        a = a.with_coords(load_coords(coords_path)?)?;
    }
    let colmap = match &args.colmap {
        Some(p) => Some(load_colmap(p)?),
        None => None,
    };

    let b = match &args.rhs {
        Some(p) => {
            let b = load_vector(p)?;
            if b.len() != a.dim() {
                return Err(Error::dim(format!(
                    "rhs has {} entries, matrix dimension is {}",
                    b.len(),
                    a.dim()
                )));
            }
            b
        }
        None => a.matvec(&vec![1.0; a.dim()]),
    };

    let t0 = Instant::now();
    let (precond, rank_stats, memory): (Box<dyn Preconditioner>, _, usize) = match args.precond {
        PrecondArg::Hsolver => {
            let config = SolverConfig {
                eps: args.eps,
                eps_mode: args.eps_mode.into(),
                target_cluster_size: args.cluster_size,
                stop_size: args.stop_size,
                dc: !args.no_dc,
                partitioner: args.partitioner.into(),
                jitter: 0.0,
            };
            let f = hierarchical_factor(&a, &config, colmap.as_ref())?;
            let stats = f.rank_stats().to_vec();
            let mem = f.memory_estimate_bytes();
            (Box::new(f), stats, mem)
        }
        PrecondArg::Ic0 => {
            let (f, shift) = ic0_auto(&a)?;
            if shift > 0.0 {
                eprintln!("ic0: factored with diagonal shift {shift:.3e}");
            }
            let mem = f.memory_estimate_bytes();
            (Box::new(f), Vec::new(), mem)
        }
        PrecondArg::None => (Box::new(IdentityPrecond), Vec::new(), 0),
    };
    let factor_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (_x, mut report) = match args.krylov {
        KrylovArg::Pcg => pcg(&a, &b, precond.as_ref(), args.tol, args.maxit)?,
        KrylovArg::Gmres => gmres(&a, &b, precond.as_ref(), args.tol, args.maxit, args.restart)?,
    };
    report.solve_seconds = t1.elapsed().as_secs_f64();
    report.factor_seconds = factor_seconds;
    report.rank_stats = rank_stats;
    report.memory_estimate_bytes = memory;

    let converged = report.converged;
    Ok((report, converged))
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn verify_config(args: &VerifyArgs) -> serde_json::Value {
    json!({
        "command": "verify",
        "suite": format!("{:?}", args.suite).to_lowercase(),
        "trials": args.trials,
        "seed": args.seed,
    })
}

fn cmd_verify(args: &VerifyArgs) -> Result<(serde_json::Value, bool)> {
    match args.suite {
        SuiteArg::Props => {
            let trials = args.trials.unwrap_or(200);
            let summary = run_error_bound_trials(trials, args.seed)?;
            let passed = summary.all_passed;
            Ok((serde_json::to_value(&summary).map_err(to_invalid)?, passed))
        }
        SuiteArg::Corollary => {
            let trials = args.trials.unwrap_or(200);
            let summary = run_error_bound_trials(trials, args.seed)?;
            let passed = summary.corollary_failures == 0 && summary.psd_failures == 0;
            let report = json!({
                "trials": summary.trials,
                "experiments": summary.experiments,
                "corollary_failures": summary.corollary_failures,
                "psd_failures": summary.psd_failures,
                "unscaled_ww_indefinite": summary.unscaled_ww_indefinite,
                "elapsed_seconds": summary.elapsed_seconds,
            });
            Ok((report, passed))
        }
        SuiteArg::Exactness => {
            let matrices = args.trials.unwrap_or(5);
            let report = exactness_study(matrices, args.seed)?;
            let passed = report.all_passed;
            Ok((serde_json::to_value(&report).map_err(to_invalid)?, passed))
        }
    }
}

fn to_invalid(e: serde_json::Error) -> Error {
    Error::invalid(format!("serializing report: {e}"))
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn bench_config(args: &BenchArgs) -> serde_json::Value {
    json!({
        "command": "bench",
        "family": format!("{:?}", args.family).to_lowercase(),
        "sizes": args.sizes,
        "eps_aniso": args.eps_aniso,
        "vert_weight": args.vert_weight,
        "neumann_fraction": args.neumann_fraction,
        "precond": format!("{:?}", args.precond).to_lowercase(),
        "eps": args.eps,
        "eps_mode": format!("{:?}", args.eps_mode).to_lowercase(),
        "dc": !args.no_dc,
        "cluster_size": args.cluster_size,
        "stop_size": args.stop_size,
        "partitioner": args.partitioner.map(|p| format!("{p:?}").to_lowercase()),
        "tol": args.tol,
        "maxit": args.maxit,
    })
}

fn parse_sizes_square(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad size {tok:?}; expected an integer")))
        })
        .collect()
}

fn parse_sizes_triple(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    s.split(',')
        .map(|tok| {
            let parts: Vec<_> = tok.trim().split(['x', 'X']).collect();
            if parts.len() != 3 {
                return Err(Error::invalid(format!(
                    "bad size {tok:?}; expected nxXnyXnz like 16x16x8"
                )));
            }
            let mut v = [0usize; 3];
            for (slot, p) in v.iter_mut().zip(&parts) {
                *slot = p
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad size component {p:?}")))?;
            }
            Ok((v[0], v[1], v[2]))
        })
        .collect()
}

fn cmd_bench(args: &BenchArgs) -> Result<serde_json::Value> {
    let family = match args.family {
        KindArg::Aniso2d => FamilySpec::Aniso2d {
            sizes: parse_sizes_square(&args.sizes)?,
            eps_aniso: args.eps_aniso,
        },
        KindArg::Extruded3d => FamilySpec::Extruded3d {
            sizes: parse_sizes_triple(&args.sizes)?,
            vert_weight: args.vert_weight,
            neumann_fraction: args.neumann_fraction,
        },
    };
    let precond = match args.precond {
        PrecondArg::Hsolver => {
            let partitioner = match (args.partitioner, &family) {
                (Some(p), _) => p.into(),
                (None, FamilySpec::Extruded3d { .. }) => Partitioner::Extruded,
                (None, _) => Partitioner::General,
            };
            PrecondSpec::Hierarchical(SolverConfig {
                eps: args.eps,
                eps_mode: args.eps_mode.into(),
                target_cluster_size: args.cluster_size,
                stop_size: args.stop_size,
                dc: !args.no_dc,
                partitioner,
                jitter: 0.0,
            })
        }
        PrecondArg::Ic0 => PrecondSpec::Ic0,
        PrecondArg::None => PrecondSpec::None,
    };
    let report = scaling_study(&family, &precond, args.tol, args.maxit)?;
    serde_json::to_value(&report).map_err(to_invalid)
}
