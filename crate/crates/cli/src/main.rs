use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracturekit::driver::{
    benchmark_vmult, memory_report, run_simulation, write_bench_csv, write_memory_csv, BenchConfig, BenchKind,
    Scenario, ScenarioConfig,
};
use fracturekit::lanes::LaneWidth;
use fracturekit::material::SplitMode;
use fracturekit::operator::{CacheMode, OperatorOptions};
use fracturekit::Error;

#[derive(Parser)]
#[command(name = "fracturekit", version, about = "Matrix-free phase-field fracture on the slit unit square")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a quasi-static loading program.
    Run(RunArgs),
    /// Timing benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Storage reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct KernelArgs {
    /// Jacobian data handling: on-the-fly or tangent.
    #[arg(long)]
    cache: Option<String>,
    /// Cells per batch (1, 2, 4 or 8); detected when omitted.
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl KernelArgs {
    fn options(&self, default_cache: CacheMode) -> Result<OperatorOptions, Error> {
        let cache = match &self.cache {
            Some(c) => c.parse()?,
            None => default_cache,
        };
        let lanes = match self.lanes {
            Some(w) => LaneWidth::from_lanes(w).ok_or_else(|| Error::Config(format!("unsupported lane width {w}")))?,
            None => LaneWidth::detect(),
        };
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        Ok(OperatorOptions {
            cache,
            lanes,
            workers: self.workers,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    level: usize,
    #[arg(long, default_value_t = 1)]
    degree: usize,
    #[arg(long, default_value = "miehe")]
    split: String,
    /// Loading steps; 800 for tension and 1500 for shear when omitted.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 4e-3)]
    eps: f64,
    /// Displacement increment per step (mm).
    #[arg(long, default_value_t = 1e-5)]
    du: f64,
    #[arg(long = "c-as", default_value_t = 100.0)]
    c_as: f64,
    #[arg(long = "lin-tol", default_value_t = 1e-6)]
    lin_tol: f64,
    #[arg(long = "as-tol", default_value_t = 1e-8)]
    as_tol: f64,
    /// Active-set iterations allowed per step.
    #[arg(long = "max-as-iters", default_value_t = 50)]
    max_as_iters: usize,
    #[arg(long, default_value_t = 5)]
    sweeps: usize,
    #[arg(long = "coarse-level", default_value_t = 2)]
    coarse_level: usize,
    #[arg(long)]
    out: PathBuf,
    /// Snapshot interval in steps; 0 disables VTK output.
    #[arg(long = "vtk-every", default_value_t = 10)]
    vtk_every: usize,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Assembled versus matrix-free Jacobian products.
    Vmult(VmultArgs),
}

#[derive(Args)]
struct VmultArgs {
    #[arg(long)]
    level: usize,
    #[arg(long)]
    degree: usize,
    #[arg(long, default_value = "miehe")]
    split: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Bytes per dof of the assembled and matrix-free Jacobians.
    Memory(MemoryArgs),
}

#[derive(Args)]
struct MemoryArgs {
    #[arg(long)]
    level: usize,
    #[arg(long)]
    degree: usize,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Resource(_) | Error::Io(_) => 4,
        Error::LinearSolver { .. }
        | Error::StepFailed { .. }
        | Error::StaleCache { .. }
        | Error::MissingEigenvalueEstimate
        | Error::NonPositiveMass { .. } => 3,
        _ => 2,
    }
}

fn check_level(level: usize) -> Result<(), Error> {
    if !(2..=10).contains(&level) {
        return Err(Error::Config(format!("level {level} outside 2..=10")));
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(args: RunArgs) -> Result<(), Error> {
    check_level(args.level)?;
    let scenario: Scenario = args.scenario.parse()?;
    let split: SplitMode = args.split.parse()?;
    let mut config = ScenarioConfig::new(scenario, args.level, args.degree, split);
    config.steps = args.steps.unwrap_or(scenario.default_steps());
    config.material.eps = args.eps;
    config.du = args.du;
    config.active_set.c = args.c_as;
    config.active_set.tol = args.as_tol;
    config.active_set.max_iterations = args.max_as_iters;
    config.krylov.rel_tol = args.lin_tol;
    config.multigrid.sweeps = args.sweeps;
    config.multigrid.coarse_level = args.coarse_level;
    config.operator = args.kernel.options(CacheMode::Tangent)?;
    config.out_dir = Some(args.out.clone());
    config.vtk_every = args.vtk_every;
    config.validate()?;
    let result = run_simulation(&config)?;
    let loads: Vec<f64> = result
        .records
        .iter()
        .map(|r| match scenario {
            Scenario::Tension => r.load_y,
            Scenario::Shear => r.load_x,
        })
        .collect();
    if let Some((i, peak)) = fracturekit::driver::peak(&loads) {
        println!(
            "{} steps, peak load {peak:.6e} kN at u = {:.4e} mm, output in {}",
            result.records.len(),
            result.records[i].applied,
            args.out.display()
        );
    }
    match result.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn bench(args: VmultArgs) -> Result<(), Error> {
    check_level(args.level)?;
    let mut config = BenchConfig::new(args.level, args.degree, args.split.parse()?);
    config.reps = args.reps;
    config.operator = args.kernel.options(CacheMode::OnTheFly)?;
    let records = benchmark_vmult(&config)?;
    write_bench_csv(create(&args.out, "bench_vmult.csv")?, &records)?;
    let time = |k: BenchKind| records.iter().find(|r| r.kind == k).map(|r| r.best_seconds);
    match (time(BenchKind::Spmv), time(BenchKind::Mfmv)) {
        (Some(sp), Some(mf)) => println!(
            "degree {} level {}: spmv {sp:.3e} s, mfmv {mf:.3e} s, mfmv/spmv {:.3}",
            args.degree,
            args.level,
            mf / sp
        ),
        (None, Some(mf)) => println!("degree {} level {}: mfmv {mf:.3e} s (assembly skipped)", args.degree, args.level),
        _ => {}
    }
    Ok(())
}

fn report(args: MemoryArgs) -> Result<(), Error> {
    check_level(args.level)?;
    let records = memory_report(args.level, args.degree)?;
    write_memory_csv(create(&args.out, "memory.csv")?, &records)?;
    for r in &records {
        println!("{} degree {} level {}: {:.1} bytes/dof", r.kind, r.degree, r.level, r.bytes_per_dof());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter)).init();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(BenchCommand::Vmult(a)) => bench(a),
        Command::Report(ReportCommand::Memory(a)) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
