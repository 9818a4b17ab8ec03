//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime (solver) error,
//! 3 I/O error. Diagnostics go to standard error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    coherence_series, dt_sweep, ensemble_stats, kymograph_export, protocol_time_steps, AccuracyRun, AnalysisError,
};
use crate::bench::{scaling_grid, speedup_table, write_points_csv, write_speedup_csv, BenchError, GridSpec, GRID_ORBITS, GRID_SIZES};
use crate::engine::{run_batch, ConfigError, EngineConfig, OrbitBatch, Threads, TrajectoryStore, DEFAULT_CHUNK_GROUP, DEFAULT_MAX_STORE_BYTES};
use crate::io::{self, AccuracyPlan, BatchSource, IoError, ModelSource, RunManifest};
use crate::model::{sample_kuramoto_batch, Dynamics, KuramotoSampling, ModelError, ModelSpec};
use crate::solvers::{ImplicitOptions, Solver};

pub const THREADS_ENV: &str = "SDEBATCH_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "sdebatch", version, about = "Batch integration of SDE and ODE systems over many independent orbits")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a batch of orbits and write the trajectory store.
    Run(RunArgs),
    /// Built-in stochastic Kuramoto protocols.
    Kuramoto {
        #[command(subcommand)]
        preset: Preset,
    },
    /// Phase-coherence analyses of a stored Kuramoto run.
    Analyze(AnalyzeArgs),
    /// Time the Kuramoto model over system size, orbit count and threads.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Bin => "bin",
        }
    }

    fn from_name(s: &str) -> Result<Self, Failure> {
        Format::from_str(s, true).map_err(|_| Failure::config(format!("unknown store format `{s}`")))
    }
}

#[derive(Debug, Args)]
struct WorkerFlags {
    /// Orbits per scheduling unit.
    #[arg(long, default_value_t = DEFAULT_CHUNK_GROUP)]
    chunk_group: usize,
    /// Worker threads: a positive integer or `all`.
    #[arg(long, env = THREADS_ENV, default_value = "all")]
    threads: Threads,
    /// Seed for the noise streams, and for sampled batches.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Built-in model, e.g. `kuramoto:5`.
    #[arg(long, conflicts_with = "model_file")]
    model: Option<String>,
    /// Model description file with drift and diffusion templates.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Initial states, one orbit per row.
    #[arg(long)]
    initx: Option<PathBuf>,
    /// Parameters, one orbit per row.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value = "em")]
    solver: Solver,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tspan: Option<f64>,
    /// Solver steps between stored samples.
    #[arg(long)]
    ksteps: Option<usize>,
    /// Orbits to integrate; defaults to the number of input rows.
    #[arg(long)]
    orbits: Option<usize>,
    #[command(flatten)]
    workers: WorkerFlags,
    /// Round a non-divisible tspan up to a whole number of chunks.
    #[arg(long)]
    pad: bool,
    #[arg(long, default_value_t = ImplicitOptions::default().tol)]
    implicit_tol: f64,
    #[arg(long, default_value_t = ImplicitOptions::default().max_iter)]
    implicit_max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STORE_BYTES)]
    max_store_bytes: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Repeat the run recorded in a manifest; other run flags are ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Preset {
    /// Speed-evaluation batch: omega in [0.01, 0.03], p in [0.001, 0.003].
    Speed(SpeedArgs),
    /// Accuracy ensemble: omega in [0.2, 0.4], p in [0.01, 0.03].
    Accuracy(AccuracyArgs),
}

#[derive(Debug, Args)]
struct SpeedArgs {
    #[arg(long = "N", default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    orbits: usize,
    #[arg(long = "K", default_value_t = 1.0)]
    coupling: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 400.0)]
    tspan: f64,
    #[arg(long, default_value_t = 40)]
    ksteps: usize,
    #[command(flatten)]
    workers: WorkerFlags,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AccuracyArgs {
    /// Coupling strength; repeatable. Defaults to 0.2, or 0.02 and 0.2 with --dt-sweep.
    #[arg(long = "K")]
    coupling: Vec<f64>,
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    #[arg(long, visible_alias = "orbits", default_value_t = 64)]
    realizations: usize,
    #[arg(long, default_value_t = 0.05, conflicts_with = "dt_sweep")]
    dt: f64,
    /// Run every dt = 2^(l-5)/5, l = 1..5, and tabulate <r(tspan)>.
    #[arg(long)]
    dt_sweep: bool,
    #[arg(long, default_value_t = 400.0)]
    tspan: f64,
    /// Time between stored samples.
    #[arg(long, default_value_t = 1.0)]
    sample_interval: f64,
    #[command(flatten)]
    workers: WorkerFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Analysis {
    /// r(t) and Phi(t) for every orbit.
    OrderParameter,
    /// Mean and population standard deviation of r(t) across orbits.
    Ensemble,
    /// Wrapped phases of one orbit as a time by oscillator grid.
    Kymograph,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Trajectory store (CSV or binary).
    store: PathBuf,
    #[arg(value_enum)]
    analysis: Analysis,
    /// Orbit for the kymograph.
    #[arg(long, default_value_t = 0)]
    orbit: usize,
    /// Output CSV; defaults to `<analysis>.csv` next to the store.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = GRID_SIZES)]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = GRID_ORBITS)]
    orbits: Vec<usize>,
    /// Thread counts to compare; speedups are relative to `1`.
    #[arg(long, value_delimiter = ',', default_value = "1,all")]
    threads: Vec<Threads>,
    #[arg(long, default_value_t = crate::bench::DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_GROUP)]
    chunk_group: usize,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 400.0)]
    tspan: f64,
    #[arg(long, default_value_t = 40)]
    ksteps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// An error with its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 1;
    pub const RUNTIME: u8 = 2;
    pub const IO: u8 = 3;

    fn config(message: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: Self::RUNTIME, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self { code: Self::IO, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::OrbitFailures(..) => Self::runtime(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::OrbitFailures(..) | BenchError::Nondeterministic(_) => Self::runtime(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, source: std::io::Error) -> Failure {
    IoError::Io { path: path.to_path_buf(), source }.into()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Failure::CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Kuramoto { preset: Preset::Speed(args) } => cmd_speed(args),
        Command::Kuramoto { preset: Preset::Accuracy(args) } => cmd_accuracy(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

/// Everything needed to produce one trajectory store.
struct RunPlan {
    command: String,
    model: ModelSource,
    batch: BatchSource,
    config: EngineConfig,
    format: Format,
}

fn load_model(source: &ModelSource) -> Result<ModelSpec, Failure> {
    match source {
        ModelSource::Builtin(name) => Ok(ModelSpec::builtin(name)?),
        ModelSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            Ok(ModelSpec::from_model_file(path.display().to_string(), &text)?)
        }
    }
}

fn load_batch(model: &ModelSpec, source: &BatchSource, orbits: usize) -> Result<OrbitBatch, Failure> {
    match source {
        BatchSource::Files { initx, params } => {
            let init = io::read_matrix_csv(initx)?;
            let params = match params {
                Some(path) => io::read_matrix_csv(path)?,
                None if model.nparams == 0 => vec![Vec::new(); init.len()],
                None => return Err(Failure::config(format!("the model takes {} parameters; pass --params", model.nparams))),
            };
            let batch = OrbitBatch::from_rows(&init, &params)?;
            if orbits > batch.orbits() {
                return Err(Failure::config(format!(
                    "{orbits} orbits requested but the input files hold {}",
                    batch.orbits()
                )));
            }
            Ok(if orbits < batch.orbits() { batch.truncated(orbits) } else { batch })
        }
        BatchSource::Sampled { preset, coupling, seed } => {
            if !matches!(model.dynamics, Dynamics::Kuramoto) {
                return Err(Failure::config("sampled batches are only available for the built-in Kuramoto model"));
            }
            let sampling = match preset.as_str() {
                "speed" => KuramotoSampling { coupling: *coupling, ..KuramotoSampling::speed() },
                "accuracy" => KuramotoSampling::accuracy(*coupling),
                other => return Err(Failure::config(format!("unknown sampling preset `{other}`"))),
            };
            Ok(sample_kuramoto_batch(model.nequat, orbits, &sampling, *seed)?)
        }
    }
}

fn report_failures(store: &TrajectoryStore) -> Result<(), Failure> {
    if store.failures.is_empty() {
        return Ok(());
    }
    for failure in store.failures.iter().take(10) {
        eprintln!("orbit failure: {failure}");
    }
    if store.failures.len() > 10 {
        eprintln!("... and {} more", store.failures.len() - 10);
    }
    Err(Failure::runtime(format!(
        "{} of {} orbits failed; their samples from the failing chunk on are NaN",
        store.failures.len(),
        store.orbits()
    )))
}

fn execute_plan(plan: RunPlan, out: &Path) -> Result<(), Failure> {
    let model = load_model(&plan.model)?;
    plan.config.validate()?;
    let batch = load_batch(&model, &plan.batch, plan.config.orbits)?;
    let store = run_batch(&model, &plan.config, &batch)?;

    create_dir(out)?;
    let store_name = format!("trajectory.{}", plan.format.name());
    let mut manifest = RunManifest::new(&plan.command, plan.model, plan.batch, plan.config, plan.format.name());
    manifest.outputs.push(store_name.clone().into());
    match plan.format {
        Format::Csv => io::write_store_csv(&out.join(&store_name), &store)?,
        Format::Bin => io::write_store_bin(&out.join(&store_name), &store, Some(&manifest))?,
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    report_failures(&store)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    if let Some(path) = &args.manifest {
        return rerun(&RunManifest::read(path)?, &args.out);
    }
    let model_source = match (&args.model, &args.model_file) {
        (Some(name), None) => ModelSource::Builtin(name.clone()),
        (None, Some(path)) => ModelSource::File(absolute(path)),
        _ => return Err(Failure::config("give exactly one of --model or --model-file")),
    };
    let model = load_model(&model_source)?;

    let (dt, tspan, ksteps) = match (args.dt, args.tspan, args.ksteps) {
        (Some(dt), Some(tspan), Some(ksteps)) => (dt, tspan, ksteps),
        _ => return Err(Failure::config("--dt, --tspan and --ksteps are required")),
    };
    let batch_source = match (&args.initx, &args.params) {
        (Some(initx), params) if params.is_some() || model.nparams == 0 => {
            BatchSource::Files { initx: absolute(initx), params: params.as_deref().map(absolute) }
        }
        (None, None) if matches!(model.dynamics, Dynamics::Kuramoto) => {
            BatchSource::Sampled { preset: "speed".into(), coupling: 1.0, seed: args.workers.seed }
        }
        _ => return Err(Failure::config("--initx and --params are required for this model (--params may be left out when it takes none)")),
    };
    let orbits = match (args.orbits, &batch_source) {
        (Some(m), _) => m,
        (None, BatchSource::Files { initx, .. }) => io::read_matrix_csv(initx)?.len(),
        (None, BatchSource::Sampled { .. }) => return Err(Failure::config("--orbits is required for a sampled batch")),
    };
    let config = EngineConfig {
        chunk_group: args.workers.chunk_group,
        seed: args.workers.seed,
        threads: args.workers.threads,
        pad: args.pad,
        implicit: ImplicitOptions { tol: args.implicit_tol, max_iter: args.implicit_max_iter },
        max_store_bytes: args.max_store_bytes,
        ..EngineConfig::new(args.solver, dt, tspan, ksteps, orbits)
    };
    let plan = RunPlan { command: "run".into(), model: model_source, batch: batch_source, config, format: args.format };
    execute_plan(plan, &args.out)
}

fn rerun(manifest: &RunManifest, out: &Path) -> Result<(), Failure> {
    if let Some(plan) = &manifest.accuracy {
        return run_accuracy(plan, &manifest.config, out);
    }
    let plan = RunPlan {
        command: manifest.command.clone(),
        model: manifest.model.clone(),
        batch: manifest.batch.clone(),
        config: manifest.config.clone(),
        format: Format::from_name(&manifest.format)?,
    };
    execute_plan(plan, out)
}

fn cmd_speed(args: SpeedArgs) -> Result<(), Failure> {
    let config = EngineConfig {
        chunk_group: args.workers.chunk_group,
        seed: args.workers.seed,
        threads: args.workers.threads,
        ..EngineConfig::new(Solver::Em, args.dt, args.tspan, args.ksteps, args.orbits)
    };
    let plan = RunPlan {
        command: "kuramoto speed".into(),
        model: ModelSource::Builtin(format!("kuramoto:{}", args.n)),
        batch: BatchSource::Sampled { preset: "speed".into(), coupling: args.coupling, seed: args.workers.seed },
        config,
        format: args.format,
    };
    execute_plan(plan, &args.out)
}

fn cmd_accuracy(args: AccuracyArgs) -> Result<(), Failure> {
    let couplings = match (args.coupling.is_empty(), args.dt_sweep) {
        (false, _) => args.coupling.clone(),
        (true, true) => vec![0.02, 0.2],
        (true, false) => vec![0.2],
    };
    let dts = if args.dt_sweep { protocol_time_steps() } else { vec![args.dt] };
    let plan = AccuracyPlan {
        oscillators: args.n,
        realisations: args.realizations,
        couplings,
        dts,
        sample_interval: args.sample_interval,
        dt_sweep: args.dt_sweep,
    };
    let template = AccuracyRun {
        oscillators: args.n,
        coupling: plan.couplings[0],
        realisations: args.realizations,
        dt: plan.dts[0],
        tspan: args.tspan,
        sample_interval: args.sample_interval,
        seed: args.workers.seed,
        threads: args.workers.threads,
    };
    let config = EngineConfig { chunk_group: args.workers.chunk_group, ..template.engine_config()? };
    run_accuracy(&plan, &config, &args.out)
}

fn run_accuracy(plan: &AccuracyPlan, config: &EngineConfig, out: &Path) -> Result<(), Failure> {
    if plan.couplings.is_empty() || plan.dts.is_empty() {
        return Err(Failure::config("accuracy plan needs at least one K and one dt"));
    }
    let template = AccuracyRun {
        oscillators: plan.oscillators,
        coupling: plan.couplings[0],
        realisations: plan.realisations,
        dt: plan.dts[0],
        tspan: config.tspan,
        sample_interval: plan.sample_interval,
        seed: config.seed,
        threads: config.threads,
    };
    let mut outputs = Vec::new();
    create_dir(out)?;
    if plan.dt_sweep {
        let rows = dt_sweep(&template, &plan.couplings, &plan.dts)?;
        io::write_sweep_csv(&out.join("dt_sweep.csv"), &rows)?;
        outputs.push(PathBuf::from("dt_sweep.csv"));
    } else {
        for &coupling in &plan.couplings {
            for &dt in &plan.dts {
                let store = AccuracyRun { coupling, dt, ..template.clone() }.run()?;
                let series = coherence_series(&store);
                let stats = ensemble_stats(store.times(), &series)?;
                let suffix = if plan.couplings.len() * plan.dts.len() == 1 { String::new() } else { format!("_K{coupling}_dt{dt}") };
                let coherence = PathBuf::from(format!("coherence{suffix}.csv"));
                let ensemble = PathBuf::from(format!("ensemble{suffix}.csv"));
                io::write_coherence_csv(&out.join(&coherence), store.times(), &series)?;
                io::write_ensemble_csv(&out.join(&ensemble), &stats)?;
                outputs.extend([coherence, ensemble]);
            }
        }
    }
    let mut manifest = RunManifest::new(
        "kuramoto accuracy",
        ModelSource::Builtin(format!("kuramoto:{}", plan.oscillators)),
        BatchSource::Sampled { preset: "accuracy".into(), coupling: plan.couplings[0], seed: config.seed },
        config.clone(),
        "csv",
    );
    manifest.outputs = outputs;
    manifest.accuracy = Some(plan.clone());
    manifest.notes.push("std_r is the population standard deviation across realisations".into());
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let store = io::read_store(&args.store)?;
    let name = match args.analysis {
        Analysis::OrderParameter => "order_parameter",
        Analysis::Ensemble => "ensemble",
        Analysis::Kymograph => "kymograph",
    };
    let out = args.out.unwrap_or_else(|| {
        let dir = args.store.parent().unwrap_or(Path::new("."));
        dir.join(format!("{name}.csv"))
    });
    match args.analysis {
        Analysis::OrderParameter => io::write_coherence_csv(&out, store.times(), &coherence_series(&store))?,
        Analysis::Ensemble => {
            let stats = ensemble_stats(store.times(), &coherence_series(&store))?;
            io::write_ensemble_csv(&out, &stats)?;
        }
        Analysis::Kymograph => io::write_kymograph_csv(&out, store.times(), &kymograph_export(&store, args.orbit)?)?,
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let spec = GridSpec {
        sizes: args.ns,
        orbit_counts: args.orbits,
        threads: args.threads,
        chunk_group: args.chunk_group,
        dt: args.dt,
        tspan: args.tspan,
        ksteps: args.ksteps,
        repeats: args.repeats,
        seed: args.seed,
        ..GridSpec::default()
    };
    create_dir(&args.out)?;
    let cells = scaling_grid(&spec, |cell| match &cell.result {
        Ok(p) => eprintln!("N={} orbits={} threads={}: mean {:.4} s, std {:.4} s", p.n, p.orbits, cell.threads, p.mean, p.std),
        Err(e) => eprintln!("N={} orbits={} threads={}: failed: {e}", cell.n, cell.orbits, cell.threads),
    })?;

    let single = Threads::fixed(1).expect("nonzero");
    let points: Vec<_> = cells.iter().filter_map(|c| c.result.as_ref().ok().cloned()).collect();
    let path = args.out.join("bench.csv");
    let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
    write_points_csv(&points, file).map_err(|e| Failure { code: Failure::IO, message: format!("{}: {e}", path.display()) })?;
    let mut outputs = vec![PathBuf::from("bench.csv")];

    let baseline: Vec<_> = cells.iter().filter(|c| c.threads == single).filter_map(|c| c.result.as_ref().ok().cloned()).collect();
    let candidates: Vec<_> = cells.iter().filter(|c| c.threads != single).filter_map(|c| c.result.as_ref().ok().cloned()).collect();
    if !baseline.is_empty() && !candidates.is_empty() {
        let rows = speedup_table(&baseline, &candidates)?;
        let path = args.out.join("speedup.csv");
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        write_speedup_csv(&rows, file).map_err(|e| Failure { code: Failure::IO, message: format!("{}: {e}", path.display()) })?;
        outputs.push("speedup.csv".into());
    }

    let template = EngineConfig {
        chunk_group: spec.chunk_group,
        seed: spec.seed,
        ..EngineConfig::new(Solver::Em, spec.dt, spec.tspan, spec.ksteps, spec.orbit_counts[0])
    };
    let mut manifest = RunManifest::new(
        "bench",
        ModelSource::Builtin(format!("kuramoto:{}", spec.sizes[0])),
        BatchSource::Sampled { preset: "speed".into(), coupling: 1.0, seed: spec.seed },
        template,
        "csv",
    );
    let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    manifest.notes.push(format!("sizes={}", list(&spec.sizes)));
    manifest.notes.push(format!("orbits={}", list(&spec.orbit_counts)));
    manifest.notes.push(format!(
        "threads={}",
        spec.threads.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    ));
    manifest.notes.push(format!("repeats={} after one untimed warm-up run", spec.repeats));
    manifest.outputs = outputs;
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    let failed = cells.iter().filter(|c| c.result.is_err()).count();
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} of {} benchmark cells failed", cells.len())));
    }
    Ok(())
}
