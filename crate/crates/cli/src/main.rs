use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bwla::acceptance::{run_criterion, CRITERIA};
use bwla::binarize::Axis;
use bwla::kernel::{bench_gemv, full_inference, full_inference_quantized, Accumulation, BenchRow};
use bwla::numerics::Matrix;
use bwla::pipeline::{
    load_layer, run_many, save_layer, trajectory_csv, BwlaConfig, RotationInit, RunReport,
    Schedule, Tensor,
};
use bwla::synth::{gen, SynthSpec};
use bwla::BwlaError;

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "BWLA_THREADS";

#[derive(Parser, Debug)]
#[command(name = "bwla", version, about = "1-bit weight quantization with Kronecker rotations")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize matrices from tensor files or a synthetic spec.
    Quantize(QuantizeArgs),
    /// Run a quantized layer on activations.
    Infer(InferArgs),
    /// Time packed and dense GEMV kernels; prints CSV.
    Bench(BenchArgs),
    /// Summarize an artifact.
    Inspect(InspectArgs),
    /// Run the acceptance checks and print one PASS/FAIL line each.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    /// Rank-2 tensor files, one matrix each.
    inputs: Vec<PathBuf>,
    /// Synthetic input, e.g. `gaussian:128x144` or `planted:64x72,noise=0.01`.
    #[arg(long, value_name = "SPEC", conflicts_with = "inputs")]
    synth: Option<String>,
    /// Artifact path, or a directory when quantizing several inputs.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// JSON report path.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Loss trajectory CSV path.
    #[arg(long, value_name = "FILE")]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// Seed for random init and synthetic inputs.
    #[arg(long)]
    seed: Option<u64>,
    /// OKT iterations (default 40).
    #[arg(long)]
    okt_iters: Option<usize>,
    /// PSP iterations (default 20).
    #[arg(long)]
    psp_iters: Option<usize>,
    /// Residual rank as a fraction of min(rows, cols).
    #[arg(long)]
    rank_ratio: Option<f64>,
    /// Weight of the mixture balance regularizer.
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Variance floor relative to the RMS of the rotated weights.
    #[arg(long)]
    sigma_min_rel: Option<f64>,
    /// Activation bits for the reported quantized forward error.
    #[arg(long)]
    act_bits: Option<u32>,
    /// Binarization channel axis.
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Order of OKT and PSP iterations.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Starting rotation.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Relative plateau tolerance; 0 runs every iteration.
    #[arg(long)]
    early_stop_tol: Option<f64>,
    /// Record wall-clock timings in the report.
    #[arg(long)]
    timings: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum AxisArg {
    Row,
    Column,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScheduleArg {
    Sequential,
    Interleaved,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InitArg {
    Identity,
    Random,
    Kurtosis,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum AccumulateArg {
    Int32,
    Float,
}

#[derive(Args, Debug)]
struct InferArgs {
    artifact: PathBuf,
    /// Rank-1 (one token) or rank-2 (tokens x inputs) activation tensor.
    activations: PathBuf,
    /// Output tensor; defaults to `<activations>.out.tensor`.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Quantize rotated activations per token to this many bits.
    #[arg(long)]
    act_bits: Option<u32>,
    /// Accumulator for quantized activations.
    #[arg(long, value_enum, default_value = "int32", requires = "act_bits")]
    accumulate: AccumulateArg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated `ROWSxCOLS` shapes.
    #[arg(long, default_value = "1024x1024,4096x4096")]
    shapes: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    artifact: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Run only this criterion.
    #[arg(long, value_name = "N")]
    only: Option<u8>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, BwlaError> {
    configure_threads()?;
    let base = match &cli.config {
        Some(path) => BwlaConfig::load(path)?,
        None => BwlaConfig::default(),
    };
    match cli.command {
        Command::Quantize(args) => quantize(base, args),
        Command::Infer(args) => infer(args),
        Command::Bench(args) => bench(args),
        Command::Inspect(args) => inspect(args),
        Command::Demo(args) => demo(args),
    }
}

fn configure_threads() -> Result<(), BwlaError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| BwlaError::Config(format!("{THREADS_ENV} must be a thread count, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| BwlaError::Config(format!("thread pool: {e}")))
}

fn apply_overrides(mut cfg: BwlaConfig, o: &ConfigOverrides) -> Result<BwlaConfig, BwlaError> {
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.okt_iters {
        cfg.okt_iters = v;
    }
    if let Some(v) = o.psp_iters {
        cfg.psp_iters = v;
    }
    if let Some(v) = o.rank_ratio {
        cfg.rank_ratio = v;
    }
    if let Some(v) = o.lambda_reg {
        cfg.lambda_reg = v;
    }
    if let Some(v) = o.sigma_min_rel {
        cfg.sigma_min_rel = v;
    }
    if let Some(v) = o.act_bits {
        cfg.act_bits = v;
    }
    if let Some(v) = o.axis {
        cfg.axis = match v {
            AxisArg::Row => Axis::Row,
            AxisArg::Column => Axis::Column,
        };
    }
    if let Some(v) = o.schedule {
        cfg.schedule = match v {
            ScheduleArg::Sequential => Schedule::Sequential,
            ScheduleArg::Interleaved => Schedule::Interleaved,
        };
    }
    if let Some(v) = o.init {
        cfg.init = match v {
            InitArg::Identity => RotationInit::Identity,
            InitArg::Random => RotationInit::Random,
            InitArg::Kurtosis => RotationInit::Kurtosis,
        };
    }
    if let Some(v) = o.early_stop_tol {
        cfg.early_stop_tol = v;
    }
    if o.timings {
        cfg.record_timings = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn quantize(base: BwlaConfig, args: QuantizeArgs) -> Result<ExitCode, BwlaError> {
    let mut cfg = apply_overrides(base, &args.overrides)?;
    if let Some(text) = &args.synth {
        let mut spec = SynthSpec::parse(text)?;
        if let Some(seed) = args.overrides.seed {
            spec.seed = seed;
        }
        cfg.synth = Some(spec);
    }

    let inputs: Vec<(String, Matrix)> = if !args.inputs.is_empty() {
        args.inputs
            .iter()
            .map(|p| Ok((stem(p), Tensor::read(p)?.to_matrix()?)))
            .collect::<Result<_, BwlaError>>()?
    } else if let Some(spec) = &cfg.synth {
        vec![(spec.to_string(), gen(spec)?.into_matrix())]
    } else {
        return Err(BwlaError::InvalidArgument(
            "nothing to quantize: pass tensor files, --synth, or a [synth] config section".into(),
        ));
    };
    for (id, w) in &inputs {
        if w.rows() == 0 || w.cols() == 0 {
            return Err(BwlaError::InvalidArgument(format!("matrix `{id}` is empty")));
        }
    }

    let runs = run_many(&inputs, &cfg)?;
    if runs.len() == 1 {
        save_layer(&args.out, &runs[0].artifact)?;
    } else {
        std::fs::create_dir_all(&args.out)?;
        for run in &runs {
            save_layer(&args.out.join(format!("{}.bwla", run.report.id)), &run.artifact)?;
        }
    }
    let report = RunReport::new(&cfg, runs.iter().map(|r| r.report.clone()).collect());
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()?)?;
    }
    if let Some(path) = &args.trajectory {
        let mut csv = String::new();
        for (k, run) in runs.iter().enumerate() {
            let body = trajectory_csv(&run.trajectory);
            let body = if k == 0 { body.as_str() } else { body.split_once('\n').map_or("", |x| x.1) };
            csv.push_str(body);
        }
        std::fs::write(path, csv)?;
    }
    for r in &report.matrices {
        println!(
            "{}: {}x{} mse {:.4e} -> {:.4e}, {:.3} bits/weight",
            r.id, r.rows, r.cols, r.mse_before, r.mse_after, r.effective_bits
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "matrix".into())
}

fn infer(args: InferArgs) -> Result<ExitCode, BwlaError> {
    let artifact = load_layer(&args.artifact)?;
    let layer = &artifact.layer;
    let acts = Tensor::read(&args.activations)?;
    let (tokens, single) = match acts.dims.as_slice() {
        [_] => (acts.to_matrix()?, true),
        [_, _] => (acts.to_matrix()?, false),
        dims => {
            return Err(BwlaError::InvalidArgument(format!(
                "activations must be rank 1 or 2, got dims {dims:?}"
            )))
        }
    };
    let acc = match args.accumulate {
        AccumulateArg::Int32 => Accumulation::Int32,
        AccumulateArg::Float => Accumulation::Float,
    };
    let mut out = Vec::with_capacity(tokens.rows() * layer.rows());
    for x in tokens.row_iter() {
        let y = match args.act_bits {
            Some(bits) => full_inference_quantized(layer, x, bits, acc)?,
            None => full_inference(layer, x)?,
        };
        out.extend(y);
    }
    let result = if single {
        Tensor::from_vec(&out)
    } else {
        Tensor::from_matrix(&Matrix::new(tokens.rows(), layer.rows(), out)?)
    };
    let path = args.out.unwrap_or_else(|| default_output(&args.activations));
    result.write(&path)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn default_output(input: &Path) -> PathBuf {
    input.with_file_name(format!("{}.out.tensor", stem(input)))
}

fn parse_shapes(text: &str) -> Result<Vec<(usize, usize)>, BwlaError> {
    text.split(',')
        .map(|s| {
            let bad = || BwlaError::InvalidArgument(format!("bad shape `{s}`, expected ROWSxCOLS"));
            let (r, c) = s.trim().split_once('x').ok_or_else(bad)?;
            Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn bench(args: BenchArgs) -> Result<ExitCode, BwlaError> {
    let shapes = parse_shapes(&args.shapes)?;
    if args.reps == 0 {
        return Err(BwlaError::InvalidArgument("--reps must be positive".into()));
    }
    let rows = bench_gemv(&shapes, args.reps, args.seed)?;
    let mut csv = format!("{}\n", BenchRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn inspect(args: InspectArgs) -> Result<ExitCode, BwlaError> {
    let artifact = load_layer(&args.artifact)?;
    let layer = &artifact.layer;
    let dims = layer.rotation.dims();
    println!("artifact      {}", args.artifact.display());
    println!("shape         {} x {}", layer.rows(), layer.cols());
    println!("kronecker     {} x {}", dims.n1, dims.n2);
    println!("residual rank {}", layer.residual.k());
    if let Some(bw) = layer.binary() {
        let axis = match bw.axis {
            Axis::Row => "row",
            Axis::Column => "column",
        };
        println!("axis          {axis}");
        let plus = bw.signs.to_bools().iter().filter(|&&p| p).count();
        println!(
            "signs         {:.2}% positive",
            100.0 * plus as f64 / (layer.rows() * layer.cols()).max(1) as f64
        );
    }
    println!("packed bytes  {}", layer.packed_weight_bytes());
    println!("orth drift    {:.3e}", layer.rotation.orthogonality_drift());
    println!("config:");
    for line in artifact.config_toml.lines() {
        println!("  {line}");
    }
    Ok(ExitCode::SUCCESS)
}

fn demo(args: DemoArgs) -> Result<ExitCode, BwlaError> {
    let ids: Vec<u8> = match args.only {
        Some(id) => vec![id],
        None => CRITERIA.iter().map(|c| c.0).collect(),
    };
    let mut failed = 0;
    for id in &ids {
        let outcome = run_criterion(*id)?;
        println!("{}", outcome.line());
        failed += usize::from(!outcome.passed());
    }
    println!("{} of {} criteria passed", ids.len() - failed, ids.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
