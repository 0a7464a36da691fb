//! `mcoffload`: run kernels and benchmarks on the simulated micro-cores.

mod args;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mcoffload::bench::report::{to_csv, to_json};
use mcoffload::bench::{
    ml::sweep_grid, run_fullsize_stream, run_ml_benchmark, run_transfer_benchmark, strategy_for, sweep_prefetch,
    BenchError, FullsizeSpec, MlReport, MlSpec, PrefetchParams, StrategyChoice, TransferSpec, TransferStrategy,
};
use mcoffload::config::{ConfigError, OutputFormat, Profile, RunConfig};
use mcoffload::device::ExecutionStats;
use mcoffload::host::{ArgBinding, CoreResult, OffloadError, OffloadInvocation, Runtime, RuntimeConfig, RuntimeError};
use mcoffload::kernel::{load_kernel, KernelProgram, KernelValue};
use mcoffload::model::{MemoryKindId, PrefetchSpec, Reference};
use mcoffload::timing::{fit_from_table, TablePoint, TimingModel, MEASURED_STALLS};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;
pub const EXIT_BUDGET: u8 = 5;
pub const EXIT_TRAP: u8 = 6;
pub const EXIT_IO: u8 = 7;
pub const EXIT_VERIFICATION: u8 = 8;

#[derive(Parser)]
#[command(name = "mcoffload", version, about = "Offload kernels onto simulated memory-constrained micro-cores")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Board preset: epiphany, microblaze or custom. Overrides the config file.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Seed for input generation and timing jitter. Overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report files. Without it reports go to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Report format: csv, json or both.
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offload a kernel file with arguments from a JSON file.
    Run(RunArgs),
    /// Run one of the benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Inspect the transfer cost model.
    #[command(subcommand)]
    Timing(TimingCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Kernel source, or its JSON encoding.
    kernel: PathBuf,
    /// JSON object of argument values keyed by parameter name.
    args: Option<PathBuf>,
    /// eager, ondemand or prefetch. Defaults to prefetch when --prefetch is given, else ondemand.
    #[arg(long)]
    strategy: Option<StrategyChoice>,
    /// Prefetch tuple for one array parameter, e.g. a:10:2:10:readonly.
    #[arg(long = "prefetch", value_name = "NAME:BUF:CHUNK:DIST:MODE")]
    prefetch: Vec<PrefetchSpec>,
    /// Number of cores in the runtime; the kernel runs on all of them.
    #[arg(long)]
    cores: Option<usize>,
    /// Memory kind of an array argument: Host, Shared or Microcore.
    #[arg(long = "kind", value_name = "NAME=KIND")]
    kinds: Vec<String>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Neural-network training kernels: feed forward, gradients, update.
    Ml(MlArgs),
    /// Stall time of single loads of various sizes on one core.
    Transfer(TransferArgs),
    /// Forward pass over an image far larger than core memory.
    Fullsize(FullsizeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MlPreset {
    Desk,
    SmallImage,
}

#[derive(Args)]
struct MlArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: MlPreset,
    #[arg(long)]
    pixels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Strategies to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "eager,ondemand,prefetch")]
    strategy: Vec<StrategyChoice>,
    /// Prefetch buffer, chunk and distance in elements.
    #[arg(long, value_name = "BUF:CHUNK:DIST", value_parser = parse_params)]
    prefetch: Option<PrefetchParams>,
    /// Time prefetch over a grid of buffer, chunk and distance values instead.
    #[arg(long)]
    sweep_prefetch: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum TimingSource {
    /// The model fitted to the measured single-load stall times.
    Fitted,
    /// The board profile's model.
    Profile,
}

#[derive(Args)]
struct TransferArgs {
    /// Transfer sizes in bytes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128,1024,8192")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ondemand,prefetch")]
    strategies: Vec<TransferStrategy>,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    /// Work done between posting and polling a prefetch, in ms.
    #[arg(long)]
    overlap_ms: Option<f64>,
    #[arg(long, value_enum, default_value = "fitted")]
    timing: TimingSource,
    /// Memory kind holding the data: Host or Shared.
    #[arg(long, default_value = "Host")]
    kind: MemoryKindId,
}

#[derive(Args)]
struct FullsizeArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pixels: usize,
    #[arg(long, default_value_t = 1)]
    hidden: usize,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long, default_value = "prefetch")]
    strategy: StrategyChoice,
    #[arg(long, value_name = "BUF:CHUNK:DIST", value_parser = parse_params)]
    prefetch: Option<PrefetchParams>,
}

#[derive(Subcommand)]
enum TimingCommand {
    /// Print the active model, the fitted model and its replay of the measured stalls.
    Show {
        /// Fit a model to these points instead, as BYTES:MS pairs.
        #[arg(long, value_delimiter = ',', value_name = "BYTES:MS", value_parser = parse_point)]
        fit: Vec<TablePoint>,
    },
}

fn parse_params(s: &str) -> Result<PrefetchParams, String> {
    let f: Vec<&str> = s.split(':').collect();
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad number `{x}` in `{s}`"));
    match f.as_slice() {
        [b, c, d] => Ok(PrefetchParams { buffer: num(b)?, chunk: num(c)?, distance: num(d)? }),
        _ => Err(format!("expected BUF:CHUNK:DIST, got `{s}`")),
    }
}

fn parse_point(s: &str) -> Result<TablePoint, String> {
    let (b, ms) = s.split_once(':').ok_or_else(|| format!("expected BYTES:MS, got `{s}`"))?;
    Ok(TablePoint {
        bytes: b.trim().parse().map_err(|_| format!("bad byte count `{b}`"))?,
        mean_ms: ms.trim().parse().map_err(|_| format!("bad time `{ms}`"))?,
    })
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Self { code, message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            ConfigError::Parse(_) => EXIT_PARSE,
            ConfigError::Invalid(_) => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        let code = match e {
            RuntimeError::BudgetExceeded(_) => EXIT_BUDGET,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

impl From<OffloadError> for Failure {
    fn from(e: OffloadError) -> Self {
        let code = match e {
            OffloadError::Validation(_) | OffloadError::Prefetch(_) => EXIT_VALIDATION,
            OffloadError::BudgetExceeded(_) => EXIT_BUDGET,
            OffloadError::Trap { .. } => EXIT_TRAP,
        };
        Failure::new(code, e)
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Validation(_) => Failure::new(EXIT_VALIDATION, e),
            BenchError::Runtime(r) => r.into(),
            BenchError::Offload(o) => o.into(),
            BenchError::Verification(_) => Failure::new(EXIT_VERIFICATION, e),
        }
    }
}

/// Settings shared by every command after merging flags over the config file.
struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
    format: OutputFormat,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, Failure> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = cli.profile {
            config.profile = p;
        }
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        let out = cli.out.clone().or_else(|| config.output.dir.clone());
        let format = cli.format.unwrap_or(config.output.format);
        Ok(Self { config, out, format })
    }

    fn runtime_config(&self, cores: Option<usize>) -> Result<RuntimeConfig, Failure> {
        let mut c = self.config.clone();
        if cores.is_some() {
            c.cores = cores;
            c.budgets = None;
        }
        Ok(c.runtime_config()?)
    }

    /// Writes `name.csv` and/or `name.json` under the output directory, or
    /// prints the JSON (CSV when only CSV was asked for) to stdout.
    fn emit(&self, name: &str, csv: &str, json: &str) -> Result<(), Failure> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
                if self.format.csv() {
                    write_file(&dir.join(format!("{name}.csv")), csv)?;
                }
                if self.format.json() {
                    write_file(&dir.join(format!("{name}.json")), json)?;
                }
            }
            None if self.format == OutputFormat::Csv => print!("{csv}"),
            None => print!("{json}"),
        }
        Ok(())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Context::new(&cli).and_then(|ctx| match &cli.command {
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Bench(BenchCommand::Ml(a)) => cmd_ml(&ctx, a),
        Command::Bench(BenchCommand::Transfer(a)) => cmd_transfer(&ctx, a),
        Command::Bench(BenchCommand::Fullsize(a)) => cmd_fullsize(&ctx, a),
        Command::Timing(TimingCommand::Show { fit }) => cmd_timing(&ctx, fit),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    kernel: &'a str,
    strategy: &'static str,
    host_time_ms: f64,
    results: Vec<RunResult>,
}

#[derive(Serialize)]
struct RunResult {
    core_id: usize,
    value: Option<KernelValue>,
    stats: ExecutionStats,
}

fn cmd_run(ctx: &Context, a: &RunArgs) -> Result<(), Failure> {
    let program: KernelProgram =
        load_kernel(&read_file(&a.kernel)?).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", a.kernel.display())))?;
    let text = match &a.args {
        Some(p) => read_file(p)?,
        None => String::new(),
    };
    let values = args::parse_args(&text, &program).map_err(|e| Failure::new(EXIT_PARSE, e))?;

    let mut kinds = std::collections::BTreeMap::new();
    for k in &a.kinds {
        let (name, kind) = k
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_USAGE, format!("--kind expects NAME=KIND, got `{k}`")))?;
        match program.param(name) {
            Some(p) if p.is_array => {}
            _ => return Err(Failure::new(EXIT_VALIDATION, format!("--kind names `{name}`, which is not an array parameter"))),
        }
        let kind: MemoryKindId = kind.parse().map_err(|e| Failure::new(EXIT_USAGE, e))?;
        kinds.insert(name.to_string(), kind);
    }

    let strategy_choice = match (a.strategy, a.prefetch.is_empty()) {
        (None, true) => StrategyChoice::OnDemand,
        (None, false) | (Some(StrategyChoice::Prefetch), _) => StrategyChoice::Prefetch,
        (Some(s), true) => s,
        (Some(s), false) => {
            return Err(Failure::new(EXIT_USAGE, format!("--prefetch needs the prefetch strategy, not {}", s.label())))
        }
    };
    let strategy = if strategy_choice == StrategyChoice::Prefetch && !a.prefetch.is_empty() {
        mcoffload::model::AccessStrategy::Prefetch(a.prefetch.clone())
    } else {
        let arrays: Vec<&str> = program.array_params().map(|(_, p)| p.name.as_str()).collect();
        strategy_for(strategy_choice, PrefetchParams::default(), &arrays, &arrays)
    };

    let mut rt = Runtime::new(ctx.runtime_config(a.cores)?)?;
    let cores = rt.core_count();
    let mut bindings = Vec::with_capacity(values.len());
    for (p, v) in program.params.iter().zip(values) {
        let kind = kinds.get(&p.name).cloned().unwrap_or(MemoryKindId::Host);
        bindings.push(bind(&mut rt, &kind, v, cores)?);
    }
    let results = rt.offload(OffloadInvocation::new(program.clone(), bindings, strategy.clone()))?;
    let report = RunReport {
        kernel: &program.name,
        strategy: strategy.label(),
        host_time_ms: rt.host_time().as_ms(),
        results: results
            .into_iter()
            .map(|CoreResult { core_id, value, stats }| RunResult { core_id, value, stats })
            .collect(),
    };
    let stats: Vec<&ExecutionStats> = report.results.iter().map(|r| &r.stats).collect();
    ctx.emit("run", &to_csv(&stats), &to_json(&report))
}

/// Allocates an argument. Device-resident arrays get one copy per core.
fn bind(rt: &mut Runtime, kind: &MemoryKindId, v: args::ArgValue, cores: usize) -> Result<ArgBinding, Failure> {
    Ok(match v {
        args::ArgValue::Scalar(s) => ArgBinding::Scalar(s),
        args::ArgValue::PerCore(list) => {
            ArgBinding::PerCore(list.into_iter().map(|x| bind(rt, kind, x, cores)).collect::<Result<_, _>>()?)
        }
        args::ArgValue::Array(a) if *kind == MemoryKindId::Microcore => {
            let mut per = Vec::with_capacity(cores);
            for core in 0..cores {
                let r: Reference = rt.define_on_device(core, a.elem_type(), a.len())?;
                rt.copy_to_device(&r, &a)?;
                per.push(ArgBinding::Ref(r));
            }
            ArgBinding::PerCore(per)
        }
        args::ArgValue::Array(a) => ArgBinding::Ref(rt.allocate_with(kind.clone(), &a)?),
    })
}

fn cmd_ml(ctx: &Context, a: &MlArgs) -> Result<(), Failure> {
    let mut spec = match a.preset {
        MlPreset::Desk => MlSpec::desk(),
        MlPreset::SmallImage => MlSpec::small_image(),
    };
    let config = ctx.runtime_config(a.cores)?;
    spec.n_cores = config.cores.len();
    spec.seed = ctx.config.seed;
    if let Some(v) = a.pixels {
        spec.n_pixels = v;
    }
    if let Some(v) = a.hidden {
        spec.n_hidden = v;
    }
    if let Some(v) = a.batch {
        spec.batch = v;
    }
    if let Some(p) = a.prefetch {
        spec.prefetch = p;
    }
    if a.sweep_prefetch {
        spec.strategy = StrategyChoice::Prefetch;
        let rows = sweep_prefetch(&spec, &config, &sweep_grid())?;
        return ctx.emit("ml_sweep", &to_csv(&rows), &to_json(&rows));
    }
    if a.strategy.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "no strategy given"));
    }
    let mut reports: Vec<MlReport> = Vec::new();
    for &s in &a.strategy {
        spec.strategy = s;
        reports.push(run_ml_benchmark(&spec, &config)?);
    }
    let phases: Vec<_> = reports.iter().flat_map(|r| r.phases.iter()).collect();
    ctx.emit("ml", &to_csv(&phases), &to_json(&reports))
}

fn cmd_transfer(ctx: &Context, a: &TransferArgs) -> Result<(), Failure> {
    let mut source = ctx.config.clone();
    if a.timing == TimingSource::Fitted {
        source.profile = Profile::Custom;
    }
    source.cores = Some(1);
    source.budgets = None;
    let config = source.runtime_config()?;
    let mut spec = TransferSpec {
        sizes: a.sizes.clone(),
        strategies: a.strategies.clone(),
        repetitions: a.repetitions,
        kind: a.kind.clone(),
        ..TransferSpec::default()
    };
    if let Some(w) = a.overlap_ms {
        spec.overlap_ms = w;
    }
    let rows = run_transfer_benchmark(&spec, &config)?;
    ctx.emit("transfer", &to_csv(&rows), &to_json(&rows))
}

fn cmd_fullsize(ctx: &Context, a: &FullsizeArgs) -> Result<(), Failure> {
    let config = ctx.runtime_config(a.cores)?;
    let spec = FullsizeSpec {
        n_pixels: a.pixels,
        n_hidden: a.hidden,
        n_cores: config.cores.len(),
        strategy: a.strategy,
        prefetch: a.prefetch.unwrap_or_default(),
        seed: ctx.config.seed,
    };
    let report = run_fullsize_stream(&spec, &config)?;
    ctx.emit("fullsize", &to_csv(&report.per_core), &to_json(&report))
}

#[derive(Serialize)]
struct TimingReport {
    profile: Profile,
    active: TimingModel,
    fitted: TimingModel,
    replay: Vec<ReplayRow>,
}

#[derive(Serialize)]
struct ReplayRow {
    bytes: usize,
    measured_mean_ms: f64,
    model_mean_ms: f64,
}

fn cmd_timing(ctx: &Context, fit: &[TablePoint]) -> Result<(), Failure> {
    let (fitted, points) = if fit.is_empty() {
        let pts: Vec<TablePoint> = MEASURED_STALLS.iter().map(|r| TablePoint { bytes: r.bytes, mean_ms: r.on_demand.mean }).collect();
        (TimingModel::synthetic(), pts)
    } else {
        let m = fit_from_table(fit).map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
        (m, fit.to_vec())
    };
    let replay: Vec<ReplayRow> = points
        .iter()
        .map(|p| ReplayRow {
            bytes: p.bytes,
            measured_mean_ms: p.mean_ms,
            model_mean_ms: fitted.cost_of_transfer(p.bytes, mcoffload::timing::Tier::Host),
        })
        .collect();
    let report = TimingReport {
        profile: ctx.config.profile,
        active: ctx.config.timing_model(),
        fitted,
        replay,
    };
    ctx.emit("timing", &to_csv(&report.replay), &to_json(&report))
}
