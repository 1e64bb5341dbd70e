use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sbm_multigrid::assembly::PenaltyRhs;
use sbm_multigrid::harness::{self, SolverConfig, CSV_HEADER};
use sbm_multigrid::linalg::{write_matrix_market, write_vector_market};
use sbm_multigrid::multigrid::MgMode;
use sbm_multigrid::{Execution, Result};

#[derive(Parser)]
#[command(name = "sbm", version, about = "Shifted boundary Poisson solver with shy-patch multigrid")]
struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and print its record.
    Solve(SolveArgs),
    /// Run the Cartesian product of the listed values and write a CSV.
    Sweep(SweepArgs),
    /// Measure L2 errors over refinements and fit the convergence order.
    Converge(ConvergeArgs),
    /// Normalized signed shift range over refinements and thresholds.
    ShiftStats(ShiftArgs),
    /// Report active DoFs not covered by any patch.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    H,
    P,
}

impl From<Mode> for MgMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::H => MgMode::H,
            Mode::P => MgMode::P,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RhsPenalty {
    Extended,
    Trace,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    /// Force every shift to zero.
    #[arg(long)]
    zero_shift: bool,
    /// Test value in the boundary penalty of the right-hand side.
    #[arg(long, value_enum, default_value = "extended")]
    penalty_rhs: RhsPenalty,
    /// Time one- and two-stage smoother sweeps on the finest level.
    #[arg(long)]
    time_sweeps: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    shyness: usize,
    #[arg(long = "smooth-steps", default_value_t = 3)]
    smooth_steps: usize,
    #[arg(long, value_enum, default_value = "h")]
    mg: Mode,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the record as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the finest matrix (MatrixMarket); the right-hand side goes to `<path>.rhs`.
    #[arg(long = "dump-matrix")]
    dump_matrix: Option<PathBuf>,
    /// Write the finest-level cell classification as CSV.
    #[arg(long = "dump-classification")]
    dump_classification: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize])]
    levels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0f64])]
    lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize])]
    shyness: Vec<usize>,
    #[arg(long = "smooth-steps", value_delimiter = ',', default_values_t = [3usize])]
    smooth_steps: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "h")]
    mg: Vec<Mode>,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 4, 5, 6, 7])]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    shyness: usize,
    #[arg(long = "smooth-steps", default_value_t = 3)]
    smooth_steps: usize,
    #[arg(long, value_enum, default_value = "h")]
    mg: Mode,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV with `refinements,h,l2_error,iterations`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShiftArgs {
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5, 6, 7])]
    levels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0f64, 0.5])]
    lambda: Vec<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// CSV with `p,refinements,lambda,shift_min,shift_max`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    shyness: usize,
    /// Per-vertex coverage CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "dump-classification")]
    dump_classification: Option<PathBuf>,
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn base_config(s: &SolverArgs, exec: Execution) -> SolverConfig {
    SolverConfig {
        sigma: s.sigma,
        tol: s.tol,
        max_iter: s.max_iter,
        zero_shift: s.zero_shift,
        penalty_rhs: match s.penalty_rhs {
            RhsPenalty::Extended => PenaltyRhs::Extended,
            RhsPenalty::Trace => PenaltyRhs::Trace,
        },
        time_sweeps: s.time_sweeps,
        exec,
        ..SolverConfig::default()
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn solve(args: SolveArgs, exec: Execution) -> Result<ExitCode> {
    let cfg = SolverConfig {
        mode: args.mg.into(),
        degree: args.p,
        refinements: args.levels,
        lambda: args.lambda,
        shyness: args.shyness,
        smooth_steps: args.smooth_steps,
        ..base_config(&args.solver, exec)
    };
    let out = harness::run(&cfg)?;
    let finest = out.hierarchy.finest();
    if let Some(path) = &args.dump_matrix {
        write_matrix_market(&finest.system.operator.to_csr(), create(path)?)?;
        let mut rhs_path = path.clone().into_os_string();
        rhs_path.push(".rhs");
        write_vector_market(&finest.system.rhs, create(Path::new(&rhs_path))?)?;
    }
    if let Some(path) = &args.dump_classification {
        finest.mesh.write_classification_csv(create(path)?)?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(output(&args.out)?);
    w.write_record(CSV_HEADER)?;
    w.serialize(&out.record)?;
    w.flush()?;
    if out.record.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "GMRES did not converge in {} iterations (relative residual {:.3e})",
            cfg.max_iter, out.outcome.final_relative_residual
        );
        Ok(ExitCode::from(2))
    }
}

fn sweep(args: SweepArgs, exec: Execution) -> Result<ExitCode> {
    let modes: Vec<MgMode> = args.mg.iter().map(|&m| m.into()).collect();
    let configs = harness::grid(
        &base_config(&args.solver, exec),
        &modes,
        &args.p,
        &args.levels,
        &args.lambda,
        &args.shyness,
        &args.smooth_steps,
    );
    for c in &configs {
        c.validate()?;
    }
    harness::sweep(&configs, output(&args.out)?)?;
    Ok(ExitCode::SUCCESS)
}

fn converge(args: ConvergeArgs, exec: Execution) -> Result<ExitCode> {
    let base = SolverConfig {
        mode: args.mg.into(),
        degree: args.p,
        lambda: args.lambda,
        shyness: args.shyness,
        smooth_steps: args.smooth_steps,
        ..base_config(&args.solver, exec)
    };
    let study = harness::verify_convergence(&base, &args.levels)?;
    let mut w = csv::Writer::from_writer(output(&args.out)?);
    w.write_record(["refinements", "h", "l2_error", "iterations"])?;
    for k in 0..study.levels.len() {
        w.write_record([
            study.levels[k].to_string(),
            study.h[k].to_string(),
            format!("{:e}", study.errors[k]),
            study.iterations[k].to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("observed order for p = {}: {:.3}", study.degree, study.order);
    Ok(ExitCode::SUCCESS)
}

fn shift_stats(args: ShiftArgs, exec: Execution) -> Result<ExitCode> {
    let mut w = csv::Writer::from_writer(output(&args.out)?);
    w.write_record(["p", "refinements", "lambda", "shift_min", "shift_max"])?;
    for &lambda in &args.lambda {
        for &level in &args.levels {
            let cfg = SolverConfig {
                degree: args.p,
                refinements: level,
                lambda,
                sigma: args.sigma.unwrap_or(5.0),
                exec,
                ..SolverConfig::default()
            };
            let (lo, hi) = harness::shift_range(&cfg)?;
            w.write_record([
                args.p.to_string(),
                level.to_string(),
                lambda.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn coverage(args: CoverageArgs, exec: Execution) -> Result<ExitCode> {
    let cfg = SolverConfig {
        degree: args.p,
        refinements: args.levels,
        lambda: args.lambda,
        shyness: args.shyness,
        exec,
        ..SolverConfig::default()
    };
    let (mesh, report) = harness::coverage(&cfg)?;
    if let Some(path) = &args.dump_classification {
        mesh.write_classification_csv(create(path)?)?;
    }
    report.write_csv(output(&args.out)?)?;
    eprintln!("{} uncovered active DoFs", report.uncovered.len());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = exec(cli.sequential);
    let result = match cli.command {
        Command::Solve(a) => solve(a, exec),
        Command::Sweep(a) => sweep(a, exec),
        Command::Converge(a) => converge(a, exec),
        Command::ShiftStats(a) => shift_stats(a, exec),
        Command::Coverage(a) => coverage(a, exec),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
