use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use atomql::gpu::{load_presets, GpuSpec};
use atomql::ingest::{self, CounterDump};
use atomql::opquant::{derive_all, AnalysisOptions};
use atomql::param_table::{load_table, parse_bench_rows, save_table, ParamTable};
use atomql::queue_sim::{
    generate_dump, simulate_scenario, synthesize_table, ConstantService, GpuRef, Scenario, ServiceFunction,
    SyntheticFamily,
};
use atomql::report::{num, Format, Report};
use atomql::sweep::{run_sweep, write_sweep_csv, SweepSpec};

const PRESETS_ENV: &str = "ATOMQL_GPU_PRESETS";
const DEFAULT_SEED: u64 = 1;
const EXIT_INPUT: u8 = 1;
const EXIT_OVER100: u8 = 3;

#[derive(Parser)]
#[command(name = "atomql", version, about = "Shared-memory atomic unit utilization from GPU performance counters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a service-time table from benchmark rows or a synthetic family.
    Calibrate(CalibrateArgs),
    /// Estimate per-SM atomic unit utilization of one kernel launch.
    Analyze(AnalyzeArgs),
    /// Run a scenario through the queue simulator.
    Simulate(SimulateArgs),
    /// Sweep one scenario parameter and emit plot data.
    Sweep(SweepArgs),
    /// Write a canonical counter dump.
    Export(ExportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Benchmark CSV with `n,e,c,total_cycles` rows.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    bench: Option<PathBuf>,
    /// `default` or a JSON file with alpha, beta, gamma, delta, pipe_width.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    gpu: String,
    #[arg(long)]
    out: PathBuf,
    /// Free-form provenance stored in the table header.
    #[arg(long)]
    metadata: Option<String>,
    /// Mark the table as measured with POPC.INC jobs on the FAO axis.
    #[arg(long)]
    popc_calibrated: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
    Csv,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Text => Format::Text,
            OutputFormat::Json => Format::Json,
            OutputFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct CounterSources {
    /// NVProf per-SM metrics CSV.
    #[arg(long, conflicts_with = "canonical", required_unless_present = "canonical")]
    nvprof: Option<PathBuf>,
    /// Canonical JSON counter dump.
    #[arg(long)]
    canonical: Option<PathBuf>,
    /// NCU metrics CSV supplying the total atomic operation count.
    #[arg(long)]
    ncu: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    table: PathBuf,
    #[command(flatten)]
    sources: CounterSources,
    /// GPU the NVProf counters came from; defaults to the table's GPU.
    #[arg(long)]
    gpu: Option<String>,
    /// Average active threads per job to use when no NCU total is available.
    #[arg(long)]
    assume_e: Option<f64>,
    /// The kernel's FAO jobs are POPC.INC instructions.
    #[arg(long)]
    popc: bool,
    /// Analyze even if the dump and the table name different GPUs.
    #[arg(long)]
    force_gpu: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServiceArgs {
    /// Table backing the service function.
    #[arg(long, conflicts_with = "service", required_unless_present = "service")]
    table: Option<PathBuf>,
    /// `constant=CYCLES`, `synthetic` or `synthetic=FAMILY.json`.
    #[arg(long)]
    service: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    service: ServiceArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-job trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// `param=values`, e.g. `jobs_per_sm=1..1000000*10` or `e=1..32`.
    #[arg(long)]
    vary: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force_gpu: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Generate the dump from a scenario.
    #[arg(long, conflicts_with_all = ["nvprof", "ncu"], required_unless_present = "nvprof")]
    scenario: Option<PathBuf>,
    #[arg(long, conflicts_with = "service", requires = "scenario")]
    table: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    service: Option<String>,
    #[arg(long, requires = "scenario")]
    seed: Option<u64>,
    /// Convert an NVProf export instead.
    #[arg(long, requires = "gpu")]
    nvprof: Option<PathBuf>,
    #[arg(long, requires = "nvprof")]
    ncu: Option<PathBuf>,
    #[arg(long)]
    gpu: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn user_presets() -> Result<Vec<GpuSpec>> {
    match std::env::var_os(PRESETS_ENV) {
        Some(path) if !path.is_empty() => {
            let path = PathBuf::from(path);
            load_presets(&path).with_context(|| format!("{PRESETS_ENV}={}", path.display()))
        }
        _ => Ok(Vec::new()),
    }
}

fn resolve_gpu(name: &str, presets: &[GpuSpec]) -> Result<GpuSpec> {
    Ok(GpuSpec::resolve(name, presets)?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ParamTable> {
    load_table(path).with_context(|| format!("table {}", path.display()))
}

fn family(spec: &str) -> Result<SyntheticFamily> {
    let family = if spec == "default" {
        SyntheticFamily::default()
    } else {
        let path = Path::new(spec);
        serde_json::from_str(&read(path)?).with_context(|| format!("synthetic family {}", path.display()))?
    };
    family.validate()?;
    Ok(family)
}

/// Scenario with its GPU resolved against user presets.
fn load_scenario(path: &Path, presets: &[GpuSpec]) -> Result<Scenario> {
    let text = read(path)?;
    let mut scenario: Scenario = serde_json::from_str(&text).with_context(|| format!("scenario {}", path.display()))?;
    let gpu = scenario
        .gpu
        .resolve(presets)
        .with_context(|| format!("scenario {}", path.display()))?;
    scenario.gpu = GpuRef::Spec(gpu);
    Ok(scenario)
}

fn service_function(table: Option<&Path>, service: Option<&str>) -> Result<Box<dyn ServiceFunction>> {
    if let Some(path) = table {
        return Ok(Box::new(load(path)?));
    }
    let spec = service.unwrap_or("synthetic");
    let (kind, arg) = spec.split_once('=').map_or((spec, None), |(k, v)| (k, Some(v)));
    match (kind, arg) {
        ("constant", Some(v)) => {
            let s: f64 = v.parse().with_context(|| format!("--service {spec}"))?;
            if !(s.is_finite() && s > 0.0) {
                bail!("--service {spec}: service time must be positive");
            }
            Ok(Box::new(ConstantService(s)))
        }
        ("synthetic", arg) => Ok(Box::new(family(arg.unwrap_or("default"))?)),
        _ => bail!("--service {spec}: expected constant=CYCLES, synthetic or synthetic=FILE"),
    }
}

fn calibrate(args: CalibrateArgs) -> Result<u8> {
    let presets = user_presets()?;
    let gpu = resolve_gpu(&args.gpu, &presets)?;
    let table = match (&args.bench, &args.synthetic) {
        (Some(bench), _) => {
            let rows = parse_bench_rows(&read(bench)?).with_context(|| format!("bench {}", bench.display()))?;
            let metadata = args
                .metadata
                .clone()
                .unwrap_or_else(|| format!("bench {}", bench.display()));
            ParamTable::from_rows(gpu, metadata, rows).with_context(|| format!("bench {}", bench.display()))?
        }
        (None, Some(spec)) => {
            let table = synthesize_table(&gpu, &family(spec)?)?;
            match &args.metadata {
                Some(m) => table.with_metadata(m.clone()),
                None => table,
            }
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let table = table.with_popc_calibrated(args.popc_calibrated);
    save_table(&table, &args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let (lo, hi) = table
        .cells()
        .fold((u64::MAX, 0), |(lo, hi), (_, t)| (lo.min(t), hi.max(t)));
    println!("gpu: {}", table.gpu());
    println!(
        "coverage: {} cells (n = 1..={}, e = 1..=32, c = 0..=n), complete",
        table.len(),
        table.n_max()
    );
    println!("total_cycles: {lo}..={hi}");
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn read_counters(sources: &CounterSources, gpu: &GpuSpec) -> Result<CounterDump> {
    let dump = match (&sources.nvprof, &sources.canonical) {
        (Some(path), _) => ingest::parse_nvprof_csv(path, gpu).with_context(|| format!("nvprof {}", path.display()))?,
        (None, Some(path)) => ingest::parse_canonical(path).with_context(|| format!("dump {}", path.display()))?,
        (None, None) => unreachable!("clap requires a source"),
    };
    match &sources.ncu {
        Some(path) => {
            let agg = ingest::parse_ncu_csv(path).with_context(|| format!("ncu {}", path.display()))?;
            Ok(ingest::merge(dump, &agg)?)
        }
        None => Ok(dump),
    }
}

fn analyze(args: AnalyzeArgs) -> Result<u8> {
    let presets = user_presets()?;
    let table = load(&args.table)?;
    let gpu = match &args.gpu {
        Some(name) => resolve_gpu(name, &presets)?,
        None => table.gpu().clone(),
    };
    let dump = read_counters(&args.sources, &gpu)?;
    let opts = AnalysisOptions {
        assume_e: args.assume_e,
        popc_inc: args.popc,
        allow_gpu_mismatch: args.force_gpu,
    };
    let report = Report::from(derive_all(&dump, &table, &opts)?);
    emit(args.out.as_deref(), &report.render(args.format.into()))?;
    Ok(if report.has_over100() { EXIT_OVER100 } else { 0 })
}

fn seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            eprintln!("seed: {DEFAULT_SEED} (default)");
            DEFAULT_SEED
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let presets = user_presets()?;
    let scenario = load_scenario(&args.scenario, &presets)?;
    let service = service_function(args.service.table.as_deref(), args.service.service.as_deref())?;
    let seed = seed(args.seed);
    let trace = simulate_scenario(&scenario, service.as_ref(), seed)?;
    let run = generate_dump(&scenario, service.as_ref(), seed)?;
    if let Some(path) = &args.trace {
        fs::write(path, trace.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("kernel: {}", scenario.kernel_name);
    println!("seed: {seed}");
    println!("arrivals A: {}", trace.arrivals);
    println!("completions C: {}", trace.completions);
    println!("busy B: {}", num(trace.busy_cycles));
    println!("trace span T_trace: {}", num(trace.total_time));
    println!("kernel time T_kernel: {}", run.kernel_cycles);
    println!("U_sim = B / T_kernel: {}", num(run.simulated_utilization()));
    Ok(0)
}

fn sweep(args: SweepArgs) -> Result<u8> {
    let presets = user_presets()?;
    let table = load(&args.table)?;
    let template = load_scenario(&args.scenario, &presets)?;
    let spec: SweepSpec = args.vary.parse().context("--vary")?;
    if let GpuRef::Spec(gpu) = &template.gpu {
        if !args.force_gpu && !gpu.compatible_with(table.gpu()) {
            bail!("scenario GPU `{gpu}` does not match table GPU `{}`", table.gpu());
        }
    }
    let rows = run_sweep(&template, &spec, &table, seed(args.seed));
    emit(args.out.as_deref(), &write_sweep_csv(spec.param, &rows))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} points did not run; see the status column", rows.len());
    }
    Ok(0)
}

fn export(args: ExportArgs) -> Result<u8> {
    let presets = user_presets()?;
    let dump = if let Some(path) = &args.scenario {
        let scenario = load_scenario(path, &presets)?;
        let service = service_function(args.table.as_deref(), args.service.as_deref())?;
        generate_dump(&scenario, service.as_ref(), seed(args.seed))?.dump
    } else {
        let gpu = resolve_gpu(args.gpu.as_deref().expect("clap requires --gpu"), &presets)?;
        let sources = CounterSources {
            nvprof: args.nvprof.clone(),
            canonical: None,
            ncu: args.ncu.clone(),
        };
        read_counters(&sources, &gpu)?
    };
    emit(args.out.as_deref(), &ingest::to_canonical_json(&dump))?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
